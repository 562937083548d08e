#pragma once

// High-level runs shared by the CLI, the Python bindings, and the acceptance
// checks: train a captioner from a corpus directory, generate reports with
// beam search, score predictions, and sweep the trainability ablation grid.

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "medcap/checkpoint.hpp"
#include "medcap/config.hpp"
#include "medcap/data.hpp"
#include "medcap/decode.hpp"
#include "medcap/metrics.hpp"
#include "medcap/model.hpp"
#include "medcap/train.hpp"

namespace medcap {

// The visual prefix is computed once per image; each decoding step re-feeds
// the full [prefix | prompt | generated] sequence through the LM.
inline StepFn captioner_step_fn(const Captioner<float>& model, Tensor<float> prefix,
                                std::vector<int> prompt_ids) {
  return [&model, prefix = std::move(prefix),
          prompt_ids = std::move(prompt_ids)](const std::vector<int>& generated) {
    NoGradGuard no_grad;
    Tensor<float> logits = model.lm().next_token_logits(&prefix, prompt_ids, generated);
    return std::vector<double>(logits.value().begin(), logits.value().end());
  };
}

std::string generate_report(const Captioner<float>& model, const Dataset& data,
                            const Sample& sample, const DecodeConfig& dc);

struct TrainResult {
  TrainStats stats;
  ParamReport report;
};

TrainResult run_train(const RunConfig& rc, const std::filesystem::path& data_dir,
                      const std::filesystem::path& out_dir, std::ostream* progress = nullptr);

void run_generate(const std::filesystem::path& checkpoint_path,
                  const std::filesystem::path& data_dir, Split split,
                  const std::filesystem::path& out_file, const DecodeConfig* decode_override,
                  std::ostream* progress = nullptr);

CorpusSummary run_evaluate(const std::filesystem::path& pred_file,
                           const std::filesystem::path& ref_file, std::ostream& out);

void run_freq_report(const std::filesystem::path& texts_file, int top_n, std::ostream& out);

struct AblationRow {
  std::string id;
  int image_size = 0;
  bool vision_trainable = false;
  std::string lm_mode;
  long long total_params = 0;
  long long trainable_params = 0;
  double rouge1_f1 = 0.0;
};

std::vector<AblationRow> ablation_grid_rows(const RunConfig& base);
std::string ablation_table_tsv(const std::vector<AblationRow>& rows);

std::vector<AblationRow> run_ablate(const RunConfig& base, const std::filesystem::path& data_dir,
                                    const std::filesystem::path& out_dir,
                                    std::ostream* progress = nullptr);

}  // namespace medcap
