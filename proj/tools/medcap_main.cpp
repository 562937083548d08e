// Command-line driver: synthetic-corpus generation, training, report
// generation, scoring, token-frequency reports, and the trainability
// ablation grid.

#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "medcap/data.hpp"
#include "medcap/errors.hpp"
#include "medcap/pipeline.hpp"

namespace {

constexpr const char* kExitCodeHelp =
    "Exit codes: 0 success, 2 configuration error, 3 data error, "
    "4 numeric failure (non-finite loss/gradient), 1 other failure.";

medcap::Split parse_split(const std::string& name) {
  if (name == "val") return medcap::Split::kVal;
  if (name == "test") return medcap::Split::kTest;
  if (name == "train") return medcap::Split::kTrain;
  throw medcap::ConfigError("unknown split '" + name + "' (expected train|val|test)");
}

nlohmann::json json_from_file(const std::string& path);

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"medcap: desk-scale image-to-report captioning pipeline"};
  app.footer(kExitCodeHelp);
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic image-caption corpus");
  std::string gen_spec_file, gen_out;
  medcap::SynthSpec synth;
  std::string gen_prompt =
      medcap::LMConfig{}.prompt_text;  // vocabulary must cover the prompt tokens
  bool gen_no_markers = false;
  std::optional<int> gen_count, gen_image_size;
  std::optional<uint64_t> gen_seed;
  gen->add_option("--spec", gen_spec_file, "JSON file with count/image_size/seed/markers");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--count", gen_count, "Sample count (overrides --spec)");
  gen->add_option("--image-size", gen_image_size, "Stored image size, divisible by 14");
  gen->add_option("--seed", gen_seed, "Corpus seed");
  gen->add_flag("--no-markers", gen_no_markers, "Disable the arrow-marker attribute");
  gen->add_option("--prompt", gen_prompt, "Prompt text included in the vocabulary");

  // train
  auto* train = app.add_subcommand("train", "Train a captioner on a generated corpus");
  std::string train_config_file, train_data, train_out;
  std::optional<uint64_t> train_seed;
  train->add_option("--config", train_config_file, "Run-config JSON (defaults when omitted)");
  train->add_option("--data", train_data, "Corpus directory from gen-data")->required();
  train->add_option("--out", train_out, "Output directory")->required();
  train->add_option("--seed", train_seed, "Overrides the config seed");

  // generate
  auto* generate = app.add_subcommand("generate", "Decode reports for a corpus split");
  std::string gen_ckpt, gen_data_dir, gen_split = "val", gen_out_file;
  std::optional<int> beam, min_len, max_len;
  std::optional<double> rep_penalty;
  generate->add_option("--checkpoint", gen_ckpt, "Checkpoint from train")->required();
  generate->add_option("--data", gen_data_dir, "Corpus directory")->required();
  generate->add_option("--split", gen_split, "train|val|test (default val)");
  generate->add_option("--out", gen_out_file, "Predictions file, one report per line")
      ->required();
  generate->add_option("--beam", beam, "Beam size (default from checkpoint config)");
  generate->add_option("--rep-penalty", rep_penalty, "Repetition penalty");
  generate->add_option("--min-len", min_len, "Minimum generated length");
  generate->add_option("--max-len", max_len, "Maximum generated length");

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against references");
  std::string pred_file, ref_file;
  evaluate->add_option("--pred", pred_file, "Predictions, one per line")->required();
  evaluate->add_option("--ref", ref_file, "References, one per line")->required();

  // freq-report
  auto* freq = app.add_subcommand("freq-report", "Ranked token frequencies of a text file");
  std::string texts_file;
  int top_n = 20;
  freq->add_option("--texts", texts_file, "Text file, one document per line")->required();
  freq->add_option("--top", top_n, "Number of tokens to report (default 20)");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "Run the five-row trainability grid");
  std::string ablate_config_file, ablate_data, ablate_out;
  std::optional<uint64_t> ablate_seed;
  ablate->add_option("--config", ablate_config_file, "Run-config JSON (defaults when omitted)");
  ablate->add_option("--data", ablate_data, "Corpus directory")->required();
  ablate->add_option("--out", ablate_out, "Output directory")->required();
  ablate->add_option("--seed", ablate_seed, "Overrides the config seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) {
      if (!gen_spec_file.empty()) {
        const auto j = json_from_file(gen_spec_file);
        if (j.contains("count")) synth.count = j.at("count").get<int>();
        if (j.contains("image_size")) synth.image_size = j.at("image_size").get<int>();
        if (j.contains("seed")) synth.seed = j.at("seed").get<uint64_t>();
        if (j.contains("markers")) synth.markers = j.at("markers").get<bool>();
      }
      if (gen_count) synth.count = *gen_count;
      if (gen_image_size) synth.image_size = *gen_image_size;
      if (gen_seed) synth.seed = *gen_seed;
      if (gen_no_markers) synth.markers = false;
      medcap::generate_corpus(synth, gen_out, gen_prompt);
      std::cout << "wrote " << synth.count << " samples to " << gen_out << "\n";
    } else if (train->parsed()) {
      medcap::RunConfig rc = train_config_file.empty()
                                 ? medcap::RunConfig{}
                                 : medcap::load_run_config(train_config_file);
      if (train_seed) rc.seed = *train_seed;
      const medcap::TrainResult result = medcap::run_train(rc, train_data, train_out, &std::cerr);
      std::cout << "trained " << result.stats.steps << " steps, final loss "
                << result.stats.last_loss_mean << "\n"
                << "params total " << result.report.total << " trainable "
                << result.report.trainable << "\n";
    } else if (generate->parsed()) {
      std::optional<medcap::DecodeConfig> overridden;
      if (beam || rep_penalty || min_len || max_len) {
        const medcap::Checkpoint ckpt = medcap::load_checkpoint(gen_ckpt);
        medcap::DecodeConfig dc = medcap::decode_config(
            medcap::parse_run_config(ckpt.run_config()));
        if (beam) dc.beam_size = *beam;
        if (rep_penalty) dc.repetition_penalty = *rep_penalty;
        if (min_len) dc.min_len = *min_len;
        if (max_len) dc.max_len = *max_len;
        overridden = dc;
      }
      medcap::run_generate(gen_ckpt, gen_data_dir, parse_split(gen_split), gen_out_file,
                           overridden ? &*overridden : nullptr, &std::cerr);
      std::cout << "wrote predictions to " << gen_out_file << "\n";
    } else if (evaluate->parsed()) {
      medcap::run_evaluate(pred_file, ref_file, std::cout);
    } else if (freq->parsed()) {
      medcap::run_freq_report(texts_file, top_n, std::cout);
    } else if (ablate->parsed()) {
      medcap::RunConfig rc = ablate_config_file.empty()
                                 ? medcap::RunConfig{}
                                 : medcap::load_run_config(ablate_config_file);
      if (ablate_seed) rc.seed = *ablate_seed;
      const auto rows = medcap::run_ablate(rc, ablate_data, ablate_out, &std::cerr);
      std::cout << medcap::ablation_table_tsv(rows);
    }
  } catch (const medcap::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const medcap::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const medcap::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

namespace {

nlohmann::json json_from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw medcap::ConfigError("cannot open spec file: " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw medcap::ConfigError("spec file is not valid JSON: " + std::string(e.what()));
  }
}

}  // namespace
