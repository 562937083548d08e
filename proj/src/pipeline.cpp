#include "medcap/pipeline.hpp"

#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>

#include "medcap/errors.hpp"

namespace medcap {

namespace {

Captioner<float> build_model(const RunConfig& rc, int vocab_size) {
  ModelConfig mc = model_config(rc);
  mc.lm.vocab_size = vocab_size;
  const AblationSpec spec = ablation_spec(rc);
  Captioner<float> model(apply_ablation(mc, spec), rc.seed);
  model.apply_trainability(spec);
  return model;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

std::string params_report_tsv(const ParamReport& r) {
  std::ostringstream out;
  out << "component\ttotal\ttrainable\n";
  auto row = [&](const char* name, long long total, long long trainable) {
    out << name << "\t" << total << "\t" << trainable << "\n";
  };
  row("vision", r.vision, r.vision_trainable);
  row("qformer", r.qformer, r.qformer_trainable);
  row("lm_base", r.lm_base, r.lm_base_trainable);
  row("soft_prompts", r.soft_prompts, r.soft_prompts_trainable);
  row("total", r.total, r.trainable);
  return out.str();
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

}  // namespace

std::string generate_report(const Captioner<float>& model, const Dataset& data,
                            const Sample& sample, const DecodeConfig& dc) {
  NoGradGuard no_grad;
  const ImageTensor img =
      resize_for_inference(sample.image, model.vision().config().image_size);
  Tensor<float> prefix = model.bridge().bridge(model.vision().forward(img));
  const StepFn step = captioner_step_fn(model, std::move(prefix), data.prompt_ids);
  const std::vector<BeamHypothesis> hyps = beam_search(step, dc);
  return data.vocab.decode(hyps.front().ids);
}

TrainResult run_train(const RunConfig& rc, const std::filesystem::path& data_dir,
                      const std::filesystem::path& out_dir, std::ostream* progress) {
  std::filesystem::create_directories(out_dir);
  const Dataset data = load_dataset(data_dir, Split::kTrain, rc.prompt_text);
  Captioner<float> model = build_model(rc, data.vocab.size());
  Trainer<float> trainer(model, data, train_config(rc), ablation_spec(rc));
  std::ofstream metrics(out_dir / "metrics.tsv");
  if (!metrics) throw DataError("cannot write metrics log in " + out_dir.string());
  TrainResult result;
  result.stats = trainer.run(&metrics, progress);
  result.report = model.param_report();
  write_text_file(out_dir / "config.json", canonical_json(rc));
  write_text_file(out_dir / "params.tsv", params_report_tsv(result.report));
  ParamList<float> params = model.params();
  save_checkpoint(out_dir / "checkpoint.qbck", params, &trainer.optimizer(),
                  canonical_json(rc), vocab_hash(data.vocab));
  return result;
}

void run_generate(const std::filesystem::path& checkpoint_path,
                  const std::filesystem::path& data_dir, Split split,
                  const std::filesystem::path& out_file, const DecodeConfig* decode_override,
                  std::ostream* progress) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  const std::string cfg_text = ckpt.run_config();
  if (cfg_text.empty())
    throw DataError("checkpoint has no embedded run config: " + checkpoint_path.string());
  const RunConfig rc = parse_run_config(cfg_text);
  const Dataset data = load_dataset(data_dir, split, rc.prompt_text);
  if (vocab_hash(data.vocab) != ckpt.vocab_hash())
    throw DataError("provenance mismatch: vocabulary in " + data_dir.string() +
                    " differs from the one this checkpoint was trained with");
  Captioner<float> model = build_model(rc, data.vocab.size());
  ParamList<float> params = model.params();
  restore_params(params, ckpt);
  const DecodeConfig dc = decode_override ? *decode_override : decode_config(rc);
  std::ofstream out(out_file);
  if (!out) throw DataError("cannot write predictions to " + out_file.string());
  int done = 0;
  for (const Sample& sample : data.samples) {
    out << generate_report(model, data, sample, dc) << "\n";
    ++done;
    if (progress && done % 20 == 0)
      *progress << "generated " << done << "/" << data.samples.size() << "\n";
  }
}

CorpusSummary run_evaluate(const std::filesystem::path& pred_file,
                           const std::filesystem::path& ref_file, std::ostream& out) {
  const std::vector<std::string> preds = read_lines(pred_file);
  const std::vector<std::string> refs = read_lines(ref_file);
  if (preds.size() != refs.size())
    throw DataError("prediction/reference line counts differ: " +
                    std::to_string(preds.size()) + " vs " + std::to_string(refs.size()));
  std::vector<std::pair<std::string, std::string>> pairs;
  pairs.reserve(preds.size());
  for (size_t i = 0; i < preds.size(); ++i) pairs.emplace_back(preds[i], refs[i]);
  const CorpusSummary s = corpus_rouge1(pairs);
  char line[160];
  out << "count\trouge1_precision\trouge1_recall\trouge1_f1\tbertscore\n";
  std::snprintf(line, sizeof(line), "%d\t%.6f\t%.6f\t%.6f\tn/a\n", s.count, s.mean_precision,
                s.mean_recall, s.mean_f1);
  out << line;
  return s;
}

void run_freq_report(const std::filesystem::path& texts_file, int top_n, std::ostream& out) {
  const auto ranked = token_frequency_report(read_lines(texts_file), top_n);
  out << "token\tcount\n";
  for (const auto& [token, count] : ranked) out << token << "\t" << count << "\n";
}

std::vector<AblationRow> ablation_grid_rows(const RunConfig& base) {
  auto make = [&](const std::string& id, bool vision_trainable, const std::string& lm_mode,
                  int image_size) {
    AblationRow row;
    row.id = id;
    row.vision_trainable = vision_trainable;
    row.lm_mode = lm_mode;
    row.image_size = image_size;
    return row;
  };
  const int small = base.image_size;
  const int large = base.image_size * 2;
  return {
      make("full-scratch", true, "full", small),
      make("frozen-lm", false, "frozen", small),
      make("ptuning", false, "ptuning", small),
      make("vision-ptuning", true, "ptuning", small),
      make("vision-ptuning-large", true, "ptuning", large),
  };
}

std::string ablation_table_tsv(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "row\timage_size\tvision_trainable\tlm_mode\ttotal_params\ttrainable_params\trouge1_f1\n";
  for (const auto& r : rows) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6f", r.rouge1_f1);
    out << r.id << "\t" << r.image_size << "\t" << (r.vision_trainable ? "yes" : "no") << "\t"
        << r.lm_mode << "\t" << r.total_params << "\t" << r.trainable_params << "\t" << buf
        << "\n";
  }
  return out.str();
}

std::vector<AblationRow> run_ablate(const RunConfig& base, const std::filesystem::path& data_dir,
                                    const std::filesystem::path& out_dir,
                                    std::ostream* progress) {
  std::filesystem::create_directories(out_dir);
  std::vector<AblationRow> rows = ablation_grid_rows(base);
  const Dataset train_data = load_dataset(data_dir, Split::kTrain, base.prompt_text);
  const Dataset val_data = load_dataset(data_dir, Split::kVal, base.prompt_text);
  if (val_data.samples.empty()) throw DataError("ablation needs a non-empty validation split");

  // Optional shared base: rows that stand in for pretrained-backbone setups
  // (everything except the from-scratch row) start from one model trained in
  // full mode at the grid's larger image size, the analog of sharing a
  // foundation backbone across the comparison.
  std::optional<Captioner<float>> shared_base;
  if (base.pretrain_steps > 0) {
    RunConfig pc = base;
    pc.vision_trainable = true;
    pc.lm_mode = "full";
    pc.image_size = base.image_size * 2;
    pc.max_steps = base.pretrain_steps;
    pc.epochs = base.pretrain_steps;  // max_steps is the binding limit
    pc.seed = derive_seed(base.seed, "ablate-base");
    if (progress)
      *progress << "[ablate] shared base (image " << pc.image_size << ", " << pc.max_steps
                << " steps)\n";
    const std::filesystem::path base_dir = out_dir / "base";
    std::filesystem::create_directories(base_dir);
    shared_base.emplace(build_model(pc, train_data.vocab.size()));
    Trainer<float> trainer(*shared_base, train_data, train_config(pc), ablation_spec(pc));
    std::ofstream metrics(base_dir / "metrics.tsv");
    trainer.run(&metrics, progress);
    write_text_file(base_dir / "config.json", canonical_json(pc));
  }

  for (auto& row : rows) {
    RunConfig rc = base;
    rc.vision_trainable = row.vision_trainable;
    rc.lm_mode = row.lm_mode;
    rc.image_size = row.image_size;
    if (progress)
      *progress << "[ablate] row " << row.id << " (image " << row.image_size << ", lm "
                << row.lm_mode << ")\n";
    const std::filesystem::path row_dir = out_dir / row.id;
    std::filesystem::create_directories(row_dir);

    Captioner<float> model = build_model(rc, train_data.vocab.size());
    if (shared_base && row.lm_mode != "full") {
      const size_t copied = model.adopt_base(*shared_base);
      if (progress) *progress << "[ablate] row " << row.id << " adopted " << copied << " tensors\n";
    }
    Trainer<float> trainer(model, train_data, train_config(rc), ablation_spec(rc));
    std::ofstream metrics(row_dir / "metrics.tsv");
    trainer.run(&metrics, progress);
    const ParamReport report = model.param_report();
    row.total_params = report.total;
    row.trainable_params = report.trainable;
    write_text_file(row_dir / "config.json", canonical_json(rc));
    write_text_file(row_dir / "params.tsv", params_report_tsv(report));
    ParamList<float> params = model.params();
    save_checkpoint(row_dir / "checkpoint.qbck", params, &trainer.optimizer(),
                    canonical_json(rc), vocab_hash(train_data.vocab));

    const DecodeConfig dc = decode_config(rc);
    std::ofstream preds(row_dir / "val.pred.txt");
    std::vector<std::pair<std::string, std::string>> pairs;
    for (const Sample& sample : val_data.samples) {
      std::string text = generate_report(model, val_data, sample, dc);
      preds << text << "\n";
      pairs.emplace_back(std::move(text), sample.caption);
    }
    row.rouge1_f1 = corpus_rouge1(pairs).mean_f1;
    if (progress) *progress << "[ablate] row " << row.id << " rouge1_f1 " << row.rouge1_f1 << "\n";
  }
  write_text_file(out_dir / "results.tsv", ablation_table_tsv(rows));
  write_text_file(out_dir / "config.json", canonical_json(base));
  return rows;
}

}  // namespace medcap
