#include "medcap/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "medcap/errors.hpp"
#include "medcap/rng.hpp"

namespace medcap {

const char* glyph_name(Glyph g) {
  switch (g) {
    case Glyph::kCircle: return "circle";
    case Glyph::kCross: return "cross";
    case Glyph::kBar: return "bar";
    case Glyph::kDot: return "dot";
  }
  return "?";
}

// Phrases collapse the 3x3 grid into horizontally-flip-invariant regions.
std::string position_phrase(int row, int col) {
  if (col == 1) {
    if (row == 0) return "in the upper region";
    if (row == 1) return "in the center";
    return "in the lower region";
  }
  if (row == 0) return "in the upper corner";
  if (row == 1) return "near the margin";
  return "in the lower corner";
}

std::string caption_for(const SampleAttributes& a) {
  std::string s = "ct image showing a ";
  s += glyph_name(a.glyph);
  s += " ";
  s += position_phrase(a.row, a.col);
  if (a.marker) s += " marked with white arrow";
  return s;
}

namespace {

SampleAttributes draw_attributes(const SynthSpec& spec, std::mt19937_64& rng) {
  SampleAttributes a;
  a.glyph = static_cast<Glyph>(std::uniform_int_distribution<int>(0, 3)(rng));
  a.row = std::uniform_int_distribution<int>(0, 2)(rng);
  a.col = std::uniform_int_distribution<int>(0, 2)(rng);
  a.marker = spec.markers && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < 0.5;
  return a;
}

}  // namespace

SampleAttributes sample_attributes(const SynthSpec& spec, int index) {
  auto rng = make_rng(derive_seed(spec.seed, "sample-" + std::to_string(index)));
  return draw_attributes(spec, rng);
}

namespace {

void draw_arrow(ImageTensor& img, float cx, float cy, float r0, bool point_down) {
  // Vertical arrow (symmetric about its own axis, so horizontal flips keep
  // it an arrow); points at the glyph from above or, for top-row glyphs,
  // from below.
  const float gap = 2.0f;
  const float len = r0 * 1.6f;
  const float head = r0 * 0.6f;
  const float headw = r0 * 0.55f;
  const float shaftw = std::max(1.2f, r0 * 0.14f);
  const float tip_y = point_down ? cy - r0 - gap : cy + r0 + gap;
  const float dir = point_down ? -1.0f : 1.0f;  // direction from tip to tail
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const float dx = c - cx;
      const float along = (r - tip_y) * dir;  // distance from tip toward tail
      if (along < 0 || along > len) continue;
      bool inside;
      if (along <= head) {
        inside = std::fabs(dx) <= headw * (along / head);
      } else {
        inside = std::fabs(dx) <= shaftw;
      }
      if (inside) img.at(r, c) = 1.0f;
    }
  }
}

void draw_glyph(ImageTensor& img, Glyph glyph, float cx, float cy, float r0) {
  const float intensity = 0.9f;
  const float ring_t = std::max(1.5f, r0 * 0.25f);
  const float arm_t = std::max(1.5f, r0 * 0.18f);
  const float bar_t = std::max(2.0f, r0 * 0.3f);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const float dx = c - cx;
      const float dy = r - cy;
      const float dist = std::sqrt(dx * dx + dy * dy);
      bool inside = false;
      switch (glyph) {
        case Glyph::kCircle: inside = std::fabs(dist - r0) <= ring_t; break;
        case Glyph::kDot: inside = dist <= r0 * 0.45f; break;
        case Glyph::kCross:
          inside = (std::fabs(dx) <= arm_t && std::fabs(dy) <= r0) ||
                   (std::fabs(dy) <= arm_t && std::fabs(dx) <= r0);
          break;
        case Glyph::kBar: inside = std::fabs(dy) <= bar_t && std::fabs(dx) <= r0; break;
      }
      if (inside) img.at(r, c) = intensity;
    }
  }
}

}  // namespace

SynthSample render_sample(const SynthSpec& spec, int index) {
  if (spec.image_size % 14 != 0)
    throw DataError("synthetic image size " + std::to_string(spec.image_size) +
                    " must be divisible by 14");
  auto rng = make_rng(derive_seed(spec.seed, "sample-" + std::to_string(index)));
  const SampleAttributes a = draw_attributes(spec, rng);

  const float s = static_cast<float>(spec.image_size);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  const float cx = (a.col + 0.5f) / 3.0f * s + static_cast<float>(jitter(rng)) * s;
  const float cy = (a.row + 0.5f) / 3.0f * s + static_cast<float>(jitter(rng)) * s;
  const float r0 =
      static_cast<float>(std::uniform_real_distribution<double>(0.09, 0.13)(rng)) * s;

  SynthSample out;
  out.image = make_image(spec.image_size, spec.image_size, 1);
  std::uniform_real_distribution<double> noise(0.0, 0.1);
  for (auto& p : out.image.pix) p = static_cast<float>(noise(rng));
  draw_glyph(out.image, a.glyph, cx, cy, r0);
  if (a.marker) draw_arrow(out.image, cx, cy, r0, /*point_down=*/a.row != 0);
  out.caption = caption_for(a);
  return out;
}

Split split_of_index(int index) {
  const uint64_t h = splitmix64(static_cast<uint64_t>(index)) % 10;
  if (h < 8) return Split::kTrain;
  return h == 8 ? Split::kVal : Split::kTest;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

namespace {

Vocabulary build_vocab(const std::vector<std::string>& captions, const std::string& prompt_text) {
  std::vector<std::string> tokens = lm_tokenize(prompt_text);
  for (const auto& c : captions) {
    auto t = lm_tokenize(c);
    tokens.insert(tokens.end(), t.begin(), t.end());
  }
  return Vocabulary::from_tokens(std::move(tokens));
}

}  // namespace

void generate_corpus(const SynthSpec& spec, const std::filesystem::path& out_dir,
                     const std::string& prompt_text) {
  if (spec.image_size % 14 != 0)
    throw DataError("synthetic image size " + std::to_string(spec.image_size) +
                    " must be divisible by 14");
  if (spec.count <= 0) throw DataError("synthetic corpus needs a positive sample count");
  std::filesystem::create_directories(out_dir / "images");
  std::ofstream manifests[3] = {std::ofstream(out_dir / "train.tsv"),
                                std::ofstream(out_dir / "val.tsv"),
                                std::ofstream(out_dir / "test.tsv")};
  std::ofstream refs[2] = {std::ofstream(out_dir / "val.refs.txt"),
                           std::ofstream(out_dir / "test.refs.txt")};
  std::vector<std::string> captions;
  captions.reserve(static_cast<size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    SynthSample sample = render_sample(spec, i);
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.pgm", i);
    write_pgm(sample.image, (out_dir / name).string());
    const Split sp = split_of_index(i);
    manifests[static_cast<int>(sp)] << i << "\t" << name << "\t" << sample.caption << "\n";
    if (sp == Split::kVal) refs[0] << sample.caption << "\n";
    if (sp == Split::kTest) refs[1] << sample.caption << "\n";
    captions.push_back(std::move(sample.caption));
  }
  build_vocab(captions, prompt_text).save(out_dir / "vocab.txt");
  nlohmann::ordered_json j;
  j["count"] = spec.count;
  j["image_size"] = spec.image_size;
  j["seed"] = spec.seed;
  j["markers"] = spec.markers;
  std::ofstream spec_out(out_dir / "spec.json");
  spec_out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::filesystem::path& dir, Split split,
                     const std::string& prompt_text) {
  Dataset data;
  data.vocab = Vocabulary::load(dir / "vocab.txt");
  data.prompt_ids = data.vocab.encode_text(prompt_text);
  const std::filesystem::path manifest = dir / (std::string(split_name(split)) + ".tsv");
  std::ifstream in(manifest);
  if (!in) throw DataError("cannot open manifest: " + manifest.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string index_str, path, caption;
    if (!std::getline(ls, index_str, '\t') || !std::getline(ls, path, '\t') ||
        !std::getline(ls, caption))
      throw DataError("malformed manifest line " + std::to_string(line_no) + " in " +
                      manifest.string());
    Sample s;
    try {
      s.index = std::stoi(index_str);
    } catch (const std::exception&) {
      throw DataError("bad sample index on manifest line " + std::to_string(line_no));
    }
    s.image = read_pgm((dir / path).string());
    s.caption = caption;
    s.caption_ids = data.vocab.encode_text(caption);
    for (int id : s.caption_ids)
      if (id == Vocabulary::kUnk)
        throw DataError("caption token outside the corpus vocabulary on manifest line " +
                        std::to_string(line_no));
    data.samples.push_back(std::move(s));
  }
  return data;
}

Dataset synth_dataset(const SynthSpec& spec, const std::string& prompt_text) {
  Dataset data;
  std::vector<SynthSample> rendered;
  std::vector<std::string> captions;
  rendered.reserve(static_cast<size_t>(spec.count));
  for (int i = 0; i < spec.count; ++i) {
    rendered.push_back(render_sample(spec, i));
    captions.push_back(rendered.back().caption);
  }
  data.vocab = build_vocab(captions, prompt_text);
  data.prompt_ids = data.vocab.encode_text(prompt_text);
  for (int i = 0; i < spec.count; ++i) {
    Sample s;
    s.index = i;
    s.image = std::move(rendered[static_cast<size_t>(i)].image);
    s.caption = std::move(captions[static_cast<size_t>(i)]);
    s.caption_ids = data.vocab.encode_text(s.caption);
    data.samples.push_back(std::move(s));
  }
  return data;
}

uint64_t vocab_hash(const Vocabulary& vocab) {
  std::string joined;
  for (int id = Vocabulary::kReserved; id < vocab.size(); ++id) {
    joined += vocab.token_of(id);
    joined += '\n';
  }
  return fnv1a64(joined);
}

std::vector<int> truncate_target(const std::vector<int>& caption_ids, int max_report_len) {
  if (max_report_len < 2) throw ConfigError("max_report_len must be at least 2");
  const size_t keep = std::min(caption_ids.size(), static_cast<size_t>(max_report_len - 1));
  std::vector<int> out(caption_ids.begin(), caption_ids.begin() + static_cast<long>(keep));
  out.push_back(Vocabulary::kEos);
  return out;
}

std::vector<PaddedBatch> make_batches(const Dataset& data, int batch_size,
                                      std::mt19937_64& shuffle_rng, int max_report_len) {
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  std::vector<int> order(data.samples.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), shuffle_rng);
  std::vector<PaddedBatch> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    PaddedBatch b;
    const size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    size_t max_len = 0;
    std::vector<std::vector<int>> raw;
    for (size_t i = start; i < end; ++i) {
      b.sample_pos.push_back(order[i]);
      raw.push_back(truncate_target(data.samples[static_cast<size_t>(order[i])].caption_ids,
                                    max_report_len));
      max_len = std::max(max_len, raw.back().size());
    }
    for (auto& ids : raw) {
      std::vector<uint8_t> mask(max_len, 0);
      std::fill(mask.begin(), mask.begin() + static_cast<long>(ids.size()), uint8_t(1));
      ids.resize(max_len, Vocabulary::kPad);
      b.targets.push_back(std::move(ids));
      b.target_mask.push_back(std::move(mask));
    }
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace medcap
