#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

fs::path scratch_dir() {
  fs::path p = fs::temp_directory_path() / "medcap_cli_test";
  return p;
}

RunResult run_cli(const std::string& args) {
  static int counter = 0;
  fs::path dir = scratch_dir() / "io";
  fs::create_directories(dir);
  fs::path out = dir / ("out" + std::to_string(counter) + ".txt");
  fs::path err = dir / ("err" + std::to_string(counter) + ".txt");
  ++counter;
  std::string cmd = std::string("\"") + MEDCAP_CLI_PATH + "\" " + args + " > \"" + out.string() +
                    "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_file(out);
  r.err = read_file(err);
  return r;
}

const char* kTinyConfig = R"({
  "image_size": 56, "d_v": 32, "vision_depth": 1, "vision_heads": 2,
  "qformer_k": 4, "d_q": 32, "qformer_depth": 2, "qformer_heads": 2,
  "d_lm": 32, "lm_depth": 2, "lm_heads": 2, "soft_prompt_len": 4,
  "max_positions": 64, "mlp_ratio": 2,
  "prompt_text": "findings:",
  "batch_size": 4, "epochs": 2, "peak_lr": 0.003, "warmup_steps": 1,
  "max_report_len": 16, "max_steps": 4, "augment": false,
  "beam_size": 2, "min_len": 4, "max_len": 16
})";

}  // namespace

TEST_CASE("--help lists the subcommands and the exit-code contract") {
  RunResult r = run_cli("--help");
  CHECK(r.code == 0);
  CHECK(r.out.find("gen-data") != std::string::npos);
  CHECK(r.out.find("train") != std::string::npos);
  CHECK(r.out.find("ablate") != std::string::npos);
  CHECK(r.out.find("Exit codes") != std::string::npos);
}

TEST_CASE("usage mistakes exit with code 2") {
  CHECK(run_cli("").code == 2);                          // a subcommand is required
  CHECK(run_cli("gen-data").code == 2);                  // missing --out
  CHECK(run_cli("no-such-command").code == 2);
  CHECK(run_cli("evaluate --pred a.txt").code == 2);     // missing --ref
}

TEST_CASE("the full pipeline runs end to end through the binary") {
  fs::path root = scratch_dir();
  fs::remove_all(root);
  fs::create_directories(root);
  fs::path data = root / "data";
  fs::path run = root / "run";

  RunResult gen = run_cli("gen-data --out \"" + data.string() +
                          "\" --count 40 --image-size 56 --seed 5 --prompt findings:");
  REQUIRE(gen.code == 0);
  CHECK(gen.out.find("wrote 40 samples") != std::string::npos);
  CHECK(fs::exists(data / "train.tsv"));
  CHECK(fs::exists(data / "val.refs.txt"));
  CHECK(fs::exists(data / "vocab.txt"));
  CHECK(fs::exists(data / "images/000039.pgm"));

  // Regenerating with the same seed reproduces the corpus byte-for-byte.
  fs::path data2 = root / "data2";
  REQUIRE(run_cli("gen-data --out \"" + data2.string() +
                  "\" --count 40 --image-size 56 --seed 5 --prompt findings:")
              .code == 0);
  CHECK(read_file(data / "train.tsv") == read_file(data2 / "train.tsv"));
  CHECK(read_file(data / "vocab.txt") == read_file(data2 / "vocab.txt"));
  CHECK(read_file(data / "images/000007.pgm") == read_file(data2 / "images/000007.pgm"));

  fs::path cfg = root / "tiny.json";
  {
    std::ofstream out(cfg);
    out << kTinyConfig;
  }
  RunResult train = run_cli("train --config \"" + cfg.string() + "\" --data \"" + data.string() +
                            "\" --out \"" + run.string() + "\"");
  REQUIRE(train.code == 0);
  CHECK(train.out.find("trained 4 steps") != std::string::npos);
  CHECK(fs::exists(run / "checkpoint.qbck"));
  CHECK(fs::exists(run / "config.json"));
  CHECK(fs::exists(run / "params.tsv"));
  auto metrics = read_lines(run / "metrics.tsv");
  REQUIRE(metrics.size() == 4);
  for (size_t i = 0; i < metrics.size(); ++i) {
    std::istringstream ls(metrics[i]);
    long long step;
    double lr, mean, sum;
    REQUIRE((ls >> step >> lr >> mean >> sum));
    CHECK(step == static_cast<long long>(i + 1));
  }

  fs::path preds = root / "val.pred.txt";
  RunResult decode = run_cli("generate --checkpoint \"" + (run / "checkpoint.qbck").string() +
                             "\" --data \"" + data.string() + "\" --split val --out \"" +
                             preds.string() + "\" --beam 1 --max-len 12");
  REQUIRE(decode.code == 0);
  auto pred_lines = read_lines(preds);
  auto ref_lines = read_lines(data / "val.refs.txt");
  REQUIRE(!ref_lines.empty());
  CHECK(pred_lines.size() == ref_lines.size());
  for (const auto& line : pred_lines) CHECK(!line.empty());

  RunResult eval = run_cli("evaluate --pred \"" + preds.string() + "\" --ref \"" +
                           (data / "val.refs.txt").string() + "\"");
  REQUIRE(eval.code == 0);
  auto eval_lines = [&] {
    std::vector<std::string> lines;
    std::istringstream ss(eval.out);
    std::string line;
    while (std::getline(ss, line)) lines.push_back(line);
    return lines;
  }();
  REQUIRE(eval_lines.size() == 2);
  CHECK(eval_lines[0] == "count\trouge1_precision\trouge1_recall\trouge1_f1\tbertscore");
  std::istringstream row(eval_lines[1]);
  std::string count_s, p_s, r_s, f_s, bert_s;
  std::getline(row, count_s, '\t');
  std::getline(row, p_s, '\t');
  std::getline(row, r_s, '\t');
  std::getline(row, f_s, '\t');
  std::getline(row, bert_s, '\t');
  CHECK(count_s == std::to_string(ref_lines.size()));
  CHECK(bert_s == "n/a");
  const double f1 = std::stod(f_s);
  CHECK(f1 >= 0.0);
  CHECK(f1 <= 1.0);

  RunResult freq = run_cli("freq-report --texts \"" + (data / "val.refs.txt").string() +
                           "\" --top 5");
  REQUIRE(freq.code == 0);
  std::istringstream fr(freq.out);
  std::string line;
  REQUIRE(std::getline(fr, line));
  CHECK(line == "token\tcount");
  long long prev = -1;
  int rows = 0;
  while (std::getline(fr, line)) {
    ++rows;
    auto tab = line.find('\t');
    REQUIRE(tab != std::string::npos);
    long long n = std::stoll(line.substr(tab + 1));
    if (prev >= 0) CHECK(n <= prev);
    prev = n;
  }
  CHECK(rows == 5);
}

TEST_CASE("data problems surface as exit code 3, config problems as 2") {
  fs::path root = scratch_dir() / "errors";
  fs::remove_all(root);
  fs::create_directories(root);

  // Not divisible by the patch size.
  CHECK(run_cli("gen-data --out \"" + (root / "bad").string() + "\" --count 4 --image-size 50")
            .code == 3);

  // Training from a directory with no corpus.
  fs::path cfg = root / "cfg.json";
  {
    std::ofstream out(cfg);
    out << kTinyConfig;
  }
  CHECK(run_cli("train --config \"" + cfg.string() + "\" --data \"" + (root / "void").string() +
                "\" --out \"" + (root / "run").string() + "\"")
            .code == 3);

  // A config file with an unknown key.
  fs::path typo = root / "typo.json";
  {
    std::ofstream out(typo);
    out << "{\"lerning_rate\": 0.1}";
  }
  CHECK(run_cli("train --config \"" + typo.string() + "\" --data \"" + (root / "void").string() +
                "\" --out \"" + (root / "run").string() + "\"")
            .code == 2);

  // Mismatched evaluation files.
  fs::path a = root / "a.txt", b = root / "b.txt";
  {
    std::ofstream(a.string()) << "one line\n";
    std::ofstream(b.string()) << "one line\nand another\n";
  }
  CHECK(run_cli("evaluate --pred \"" + a.string() + "\" --ref \"" + b.string() + "\"").code == 3);
  CHECK(run_cli("generate --checkpoint \"" + (root / "none.qbck").string() + "\" --data \"" +
                (root / "void").string() + "\" --out \"" + (root / "p.txt").string() + "\"")
            .code == 3);
}
