// Python bindings for the main operations: parameter arithmetic, the LR
// schedule, ROUGE scoring, constrained decoding over a Python step function,
// and the corpus/train/generate pipelines.

#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "medcap/data.hpp"
#include "medcap/decode.hpp"
#include "medcap/errors.hpp"
#include "medcap/metrics.hpp"
#include "medcap/pipeline.hpp"

namespace py = pybind11;

namespace {

medcap::DecodeConfig decode_config_from(int beam_size, double repetition_penalty, int min_len,
                                        int max_len, int eos_id) {
  medcap::DecodeConfig cfg;
  cfg.beam_size = beam_size;
  cfg.repetition_penalty = repetition_penalty;
  cfg.min_len = min_len;
  cfg.max_len = max_len;
  cfg.eos_id = eos_id;
  return cfg;
}

py::dict hyp_to_dict(const medcap::BeamHypothesis& h) {
  py::dict d;
  d["ids"] = h.ids;
  d["log_prob"] = h.log_prob;
  d["finished"] = h.finished;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Desk-scale image-to-report captioning pipeline";

  py::register_exception<medcap::ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<medcap::DataError>(m, "DataError", PyExc_ValueError);
  py::register_exception<medcap::NumericError>(m, "NumericError", PyExc_ArithmeticError);

  m.def("count_ptuning_params", &medcap::count_ptuning_params, py::arg("depth"),
        py::arg("soft_prompt_len"), py::arg("d_lm"),
        "Soft-prompt parameter count: depth * 2 * soft_prompt_len * d_lm");

  m.def(
      "lr_at",
      [](long long step, long long total_steps, double peak_lr, int warmup_steps) {
        medcap::TrainConfig cfg;
        cfg.peak_lr = peak_lr;
        cfg.warmup_steps = warmup_steps;
        return medcap::lr_at(step, cfg, total_steps);
      },
      py::arg("step"), py::arg("total_steps"), py::arg("peak_lr"), py::arg("warmup_steps"),
      "Linear warmup then cosine anneal to zero");

  m.def(
      "rouge1",
      [](const std::string& candidate, const std::string& reference) {
        const medcap::ScoredPair s = medcap::rouge1(candidate, reference);
        py::dict d;
        d["precision"] = s.precision;
        d["recall"] = s.recall;
        d["f1"] = s.f1;
        return d;
      },
      py::arg("candidate"), py::arg("reference"));

  m.def(
      "corpus_rouge1",
      [](const std::vector<std::pair<std::string, std::string>>& pairs) {
        const medcap::CorpusSummary s = medcap::corpus_rouge1(pairs);
        py::dict d;
        d["precision"] = s.mean_precision;
        d["recall"] = s.mean_recall;
        d["f1"] = s.mean_f1;
        d["count"] = s.count;
        return d;
      },
      py::arg("pairs"));

  m.def("token_frequency_report", &medcap::token_frequency_report, py::arg("texts"),
        py::arg("top_n"));

  m.def(
      "apply_repetition_penalty",
      [](std::vector<double> logits, const std::vector<int>& history, double p) {
        medcap::apply_repetition_penalty(logits, history, p);
        return logits;
      },
      py::arg("logits"), py::arg("history"), py::arg("penalty"));

  m.def(
      "apply_min_length",
      [](std::vector<double> logits, int current_len, int min_len, int eos_id) {
        medcap::apply_min_length(logits, current_len, min_len, eos_id);
        return logits;
      },
      py::arg("logits"), py::arg("current_len"), py::arg("min_len"), py::arg("eos_id"));

  m.def("log_softmax", &medcap::log_softmax, py::arg("logits"));

  m.def(
      "beam_search",
      [](const std::function<std::vector<double>(const std::vector<int>&)>& step_fn,
         int beam_size, double repetition_penalty, int min_len, int max_len, int eos_id) {
        const auto hyps = medcap::beam_search(
            step_fn, decode_config_from(beam_size, repetition_penalty, min_len, max_len, eos_id));
        py::list out;
        for (const auto& h : hyps) out.append(hyp_to_dict(h));
        return out;
      },
      py::arg("step_fn"), py::arg("beam_size") = 5, py::arg("repetition_penalty") = 2.0,
      py::arg("min_len") = 8, py::arg("max_len") = 64, py::arg("eos_id") = 2);

  m.def(
      "greedy_decode",
      [](const std::function<std::vector<double>(const std::vector<int>&)>& step_fn,
         double repetition_penalty, int min_len, int max_len, int eos_id) {
        return hyp_to_dict(medcap::greedy_decode(
            step_fn, decode_config_from(1, repetition_penalty, min_len, max_len, eos_id)));
      },
      py::arg("step_fn"), py::arg("repetition_penalty") = 2.0, py::arg("min_len") = 8,
      py::arg("max_len") = 64, py::arg("eos_id") = 2);

  m.def(
      "gen_data",
      [](const std::string& out_dir, int count, int image_size, uint64_t seed, bool markers,
         const std::string& prompt_text) {
        medcap::SynthSpec spec;
        spec.count = count;
        spec.image_size = image_size;
        spec.seed = seed;
        spec.markers = markers;
        medcap::generate_corpus(spec, out_dir,
                                prompt_text.empty() ? medcap::LMConfig{}.prompt_text
                                                    : prompt_text);
      },
      py::arg("out_dir"), py::arg("count") = 1000, py::arg("image_size") = 112,
      py::arg("seed") = 7, py::arg("markers") = true, py::arg("prompt_text") = "");

  m.def(
      "train_run",
      [](const std::string& config_json, const std::string& data_dir,
         const std::string& out_dir) {
        const medcap::RunConfig rc = medcap::parse_run_config(config_json);
        const medcap::TrainResult result = medcap::run_train(rc, data_dir, out_dir);
        py::dict d;
        d["steps"] = result.stats.steps;
        d["final_loss"] = result.stats.last_loss_mean;
        d["total_params"] = result.report.total;
        d["trainable_params"] = result.report.trainable;
        return d;
      },
      py::arg("config_json"), py::arg("data_dir"), py::arg("out_dir"));

  m.def(
      "generate_reports",
      [](const std::string& checkpoint, const std::string& data_dir, const std::string& split,
         const std::string& out_file) {
        medcap::Split sp = medcap::Split::kVal;
        if (split == "train") sp = medcap::Split::kTrain;
        else if (split == "test") sp = medcap::Split::kTest;
        else if (split != "val") throw medcap::ConfigError("unknown split '" + split + "'");
        medcap::run_generate(checkpoint, data_dir, sp, out_file, nullptr);
      },
      py::arg("checkpoint"), py::arg("data_dir"), py::arg("split"), py::arg("out_file"));

  m.def(
      "evaluate_files",
      [](const std::string& pred_file, const std::string& ref_file) {
        std::ostringstream sink;
        const medcap::CorpusSummary s = medcap::run_evaluate(pred_file, ref_file, sink);
        py::dict d;
        d["precision"] = s.mean_precision;
        d["recall"] = s.mean_recall;
        d["f1"] = s.mean_f1;
        d["count"] = s.count;
        return d;
      },
      py::arg("pred_file"), py::arg("ref_file"));
}
