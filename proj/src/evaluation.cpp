// SPDX-License-Identifier: Apache-2.0
#include "ccrt/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <mutex>
#include <set>
#include <unordered_map>

#include "ccrt/errors.hpp"
#include "ccrt/numeric.hpp"
#include "ccrt/rng.hpp"

namespace ccrt::eval {

namespace fs = std::filesystem;

namespace {

std::string iso8601_now() {
  auto now = std::chrono::system_clock::now();
  std::time_t tt = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

// ============================================================================
// Toy images
// ============================================================================

void write_toy_image(const fs::path& file, const ToyImage& img) {
  fs::create_directories(file.parent_path());
  nlohmann::ordered_json j;
  j["caption"] = img.caption;
  j["seed"] = img.seed;
  j["checkpoint"] = img.checkpoint;
  j["shape"] = img.shape;
  j["data"] = img.data;
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw InputError("cannot write toy image " + file.string());
  out << j.dump() << "\n";
}

ToyImage read_toy_image(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("toy image not found: " + file.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("unreadable toy image " + file.string() + ": " + e.what());
  }
  ToyImage img;
  img.caption = j.value("caption", "");
  img.seed = j.value("seed", std::uint64_t{0});
  img.checkpoint = j.value("checkpoint", "");
  img.shape = j.value("shape", std::vector<int>{});
  img.data = j.at("data").get<std::vector<double>>();
  return img;
}

ToyImage generate_toy_image(const backend::ModelHandle& model,
                            const std::string& prompt, std::uint64_t seed) {
  const backend::Condition cond = backend::Condition::calibration(prompt);
  backend::LatentSample x0 = backend::sample_partial(model, cond, 0, seed);
  ToyImage img;
  img.caption = prompt;
  img.seed = seed;
  img.checkpoint = model.content_hash().substr(0, 16);
  img.shape = model.model().latent_shape();
  img.data = std::move(x0.data);
  return img;
}

std::vector<double> pooled_features(const ToyImage& img) {
  // Interprets shape as (channels, h, w); anything else is treated as one
  // channel of flat pixels.
  int channels = 1, h = 1, w = static_cast<int>(img.data.size());
  if (img.shape.size() == 3) {
    channels = img.shape[0];
    h = img.shape[1];
    w = img.shape[2];
  }
  std::vector<double> feats;
  const int pool = 4;
  for (int c = 0; c < channels; ++c) {
    const double* plane = img.data.data() + static_cast<std::size_t>(c) * h * w;
    // 4x4 grid of average pools (degenerates gracefully for small planes).
    for (int py = 0; py < pool; ++py) {
      for (int px = 0; px < pool; ++px) {
        int y0 = py * h / pool, y1 = std::max(y0 + 1, (py + 1) * h / pool);
        int x0 = px * w / pool, x1 = std::max(x0 + 1, (px + 1) * w / pool);
        y1 = std::min(y1, h);
        x1 = std::min(x1, w);
        if (y0 >= h || x0 >= w) {
          feats.push_back(0.0);
          continue;
        }
        double sum = 0.0;
        int count = 0;
        for (int y = y0; y < y1; ++y)
          for (int x = x0; x < x1; ++x) {
            sum += plane[y * w + x];
            ++count;
          }
        feats.push_back(count ? sum / count : 0.0);
      }
    }
    double mean = 0.0;
    for (int i = 0; i < h * w; ++i) mean += plane[i];
    mean /= std::max(1, h * w);
    feats.push_back(mean);
  }
  return feats;
}

// ============================================================================
// Concept classifier
// ============================================================================

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double decision(const std::vector<double>& weights, const std::vector<double>& feats) {
  double z = weights.back();  // bias
  const std::size_t n = weights.size() - 1;
  for (std::size_t i = 0; i < n && i < feats.size(); ++i) z += weights[i] * feats[i];
  return z;
}

}  // namespace

int ConceptClassifier::predict(const ToyImage& img) const {
  return score_absent(img) >= 0.5 ? 1 : 0;
}

double ConceptClassifier::score_absent(const ToyImage& img) const {
  return sigmoid(decision(weights, pooled_features(img)));
}

void ConceptClassifier::save(const fs::path& file) const {
  fs::create_directories(file.parent_path());
  nlohmann::ordered_json j;
  j["concept"] = concept_name;
  j["backend_kind"] = backend_kind;
  j["train_accuracy"] = train_accuracy;
  j["test_accuracy"] = test_accuracy;
  j["weights"] = weights;
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw InputError("cannot write classifier artifact " + file.string());
  out << j.dump(2) << "\n";
}

ConceptClassifier ConceptClassifier::load(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("classifier artifact not found: " + file.string());
  nlohmann::json j;
  in >> j;
  ConceptClassifier c;
  c.concept_name = j.at("concept").get<std::string>();
  c.backend_kind = j.value("backend_kind", "pooled-logreg");
  c.train_accuracy = j.value("train_accuracy", 0.0);
  c.test_accuracy = j.value("test_accuracy", 0.0);
  c.weights = j.at("weights").get<std::vector<double>>();
  c.artifact_path = file;
  return c;
}

ConceptClassifier train_concept_classifier(
    const std::string& concept_name, const std::vector<fs::path>& concept_images,
    const std::vector<fs::path>& other_images, const ClassifierOptions& options) {
  if (concept_images.empty() || other_images.empty())
    throw DataError("classifier training needs both concept and non-concept images");
  if (options.split <= 0.0 || options.split >= 1.0)
    throw ConfigError("classifier split must be in (0, 1)");

  // Label 1 = concept absent (the classifier's positive class).
  std::vector<std::vector<double>> features;
  std::vector<int> labels;
  for (const auto& p : concept_images) {
    features.push_back(pooled_features(read_toy_image(p)));
    labels.push_back(0);
  }
  for (const auto& p : other_images) {
    features.push_back(pooled_features(read_toy_image(p)));
    labels.push_back(1);
  }

  // Standardize features on the full pool for conditioning, then fold the
  // affine map into the stored weights so artifacts stay self-contained.
  const std::size_t dim = features.front().size();
  for (const auto& f : features)
    if (f.size() != dim) throw DataError("inconsistent feature dimensions in pool");
  std::vector<double> mean(dim, 0.0), stddev(dim, 0.0);
  for (const auto& f : features)
    for (std::size_t i = 0; i < dim; ++i) mean[i] += f[i];
  for (double& m : mean) m /= static_cast<double>(features.size());
  for (const auto& f : features)
    for (std::size_t i = 0; i < dim; ++i)
      stddev[i] += (f[i] - mean[i]) * (f[i] - mean[i]);
  for (double& s : stddev) s = std::sqrt(s / static_cast<double>(features.size()));
  for (auto& f : features)
    for (std::size_t i = 0; i < dim; ++i)
      f[i] = (f[i] - mean[i]) / (stddev[i] > 1e-12 ? stddev[i] : 1.0);

  // Seeded shuffle, then split.
  std::vector<std::size_t> order(features.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(options.seed, std::string_view("classifier-split")));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.uniform_int(i)]);
  const std::size_t n_train =
      std::max<std::size_t>(1, static_cast<std::size_t>(
                                   options.split * static_cast<double>(order.size())));
  if (n_train >= order.size())
    throw DataError("pool too small for the requested split");

  std::set<int> train_classes;
  for (std::size_t i = 0; i < n_train; ++i) train_classes.insert(labels[order[i]]);
  if (train_classes.size() < 2)
    throw DataError("degenerate single-class training pool");

  // Full-batch logistic regression.
  std::vector<double> w(dim + 1, 0.0);
  for (int it = 0; it < options.iterations; ++it) {
    std::vector<double> grad(dim + 1, 0.0);
    for (std::size_t i = 0; i < n_train; ++i) {
      const auto& f = features[order[i]];
      const double err = sigmoid(decision(w, f)) - labels[order[i]];
      for (std::size_t d = 0; d < dim; ++d) grad[d] += err * f[d];
      grad[dim] += err;
    }
    const double scale = options.learning_rate / static_cast<double>(n_train);
    for (std::size_t d = 0; d <= dim; ++d) {
      w[d] -= scale * grad[d];
      if (d < dim) w[d] -= options.learning_rate * options.l2 * w[d];
    }
  }

  auto accuracy = [&](std::size_t begin, std::size_t end) {
    int correct = 0;
    for (std::size_t i = begin; i < end; ++i) {
      const int pred = sigmoid(decision(w, features[order[i]])) >= 0.5 ? 1 : 0;
      if (pred == labels[order[i]]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(end - begin);
  };

  ConceptClassifier c;
  c.concept_name = concept_name;
  c.train_accuracy = accuracy(0, n_train);
  c.test_accuracy = accuracy(n_train, order.size());

  // Unfold standardization into raw-feature weights.
  c.weights.assign(dim + 1, 0.0);
  double bias = w[dim];
  for (std::size_t d = 0; d < dim; ++d) {
    const double sd = stddev[d] > 1e-12 ? stddev[d] : 1.0;
    c.weights[d] = w[d] / sd;
    bias -= w[d] * mean[d] / sd;
  }
  c.weights[dim] = bias;
  return c;
}

// ============================================================================
// Rates
// ============================================================================

RrClsResult rr_cls(const ConceptClassifier& classifier,
                   const std::vector<fs::path>& images) {
  if (images.empty()) throw InputError("rr_cls: image list must be non-empty");
  RrClsResult result;
  int removed = 0;
  for (const auto& p : images) {
    const int pred = classifier.predict(read_toy_image(p));
    removed += pred;
    result.raw.emplace_back(p.string(), pred);
  }
  result.n = static_cast<int>(images.size());
  result.value = static_cast<double>(removed) / result.n;
  return result;
}

RrLlmResult rr_llm(llm::LlmGateway& gateway, const std::vector<fs::path>& images,
                   const std::vector<fs::path>& references,
                   const std::string& concept_name) {
  if (images.empty()) throw InputError("rr_llm: image list must be non-empty");
  RrLlmResult result;
  int yes = 0, null_count = 0;
  for (const auto& img : images) {
    try {
      const llm::JudgeVerdict verdict = gateway.judge_removal({img}, references, concept_name);
      switch (verdict.value) {
        case llm::Verdict::kYes:
          ++yes;
          result.raw.emplace_back(img.string(), "yes");
          break;
        case llm::Verdict::kNo:
          result.raw.emplace_back(img.string(), "no");
          break;
        case llm::Verdict::kNull:
          ++null_count;
          result.raw.emplace_back(img.string(), "null");
          break;
      }
      ++result.n_judged;
    } catch (const GatewayError& e) {
      std::fprintf(stderr, "[ccrt] warning: sample unjudged (%s): %s\n",
                   img.string().c_str(), e.what());
      ++result.n_unjudged;
      result.raw.emplace_back(img.string(), "unjudged");
    }
  }
  if (result.n_judged == 0)
    throw EvaluationError("rr_llm: every sample was unjudged");
  result.value = static_cast<double>(yes) / result.n_judged;
  result.value_null_as_removed =
      static_cast<double>(yes + null_count) / result.n_judged;
  result.null_rate = static_cast<double>(null_count) / result.n_judged;
  return result;
}

// ============================================================================
// Alignment scorers
// ============================================================================

namespace {

std::mutex g_scorer_mutex;

std::unordered_map<std::string, ScorerFn>& scorer_registry() {
  static std::unordered_map<std::string, ScorerFn> registry{
      {"mock",
       [](const std::string& prompt, const fs::path& image) {
         // Token overlap between the prompt and the image's generation
         // caption: 1.0 when every prompt token appears, 0.0 when none do.
         const ToyImage img = read_toy_image(image);
         const auto prompt_tokens = backend::tokenize_condition(prompt);
         if (prompt_tokens.empty()) return 0.0;
         const auto caption_tokens = backend::tokenize_condition(img.caption);
         std::set<std::string> caption_set(caption_tokens.begin(), caption_tokens.end());
         int hit = 0;
         for (const auto& t : prompt_tokens)
           if (caption_set.count(t)) ++hit;
         return static_cast<double>(hit) / static_cast<double>(prompt_tokens.size());
       }}};
  return registry;
}

}  // namespace

void register_scorer(const std::string& name, ScorerFn fn) {
  std::lock_guard<std::mutex> lock(g_scorer_mutex);
  scorer_registry()[name] = std::move(fn);
}

ScorerFn get_scorer(const std::string& name) {
  std::lock_guard<std::mutex> lock(g_scorer_mutex);
  auto it = scorer_registry().find(name);
  if (it == scorer_registry().end())
    throw ConfigError("alignment scorer '" + name + "' is not registered");
  return it->second;
}

double alignment_score(const std::string& scorer_name, const std::string& prompt,
                       const fs::path& image) {
  return get_scorer(scorer_name)(prompt, image);
}

// ============================================================================
// Checkpoint evaluation
// ============================================================================

PromptSet load_prompt_set(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("prompt set not found: " + file.string());
  PromptSet set;
  set.id = file.stem().string();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) set.prompts.push_back(line);
  }
  return set;
}

EvaluationReport evaluate_checkpoint(const fs::path& run_dir,
                                     const std::string& checkpoint_id,
                                     const PromptSet& prompts,
                                     const MetricConfig& metrics,
                                     llm::LlmGateway* gateway) {
  EvaluationReport report;
  report.checkpoint_id = checkpoint_id;
  report.prompt_set_id = prompts.id;
  report.started_at = iso8601_now();

  const backend::ModelHandle model = backend::load_checkpoint(run_dir, checkpoint_id);

  // Generate one image per prompt.
  const fs::path image_dir =
      run_dir / "reports" / "images" / checkpoint_id / prompts.id;
  std::vector<fs::path> image_paths;
  std::vector<std::string> image_prompts;
  for (std::size_t i = 0; i < prompts.prompts.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "img_%04zu.json", i);
    const fs::path path = image_dir / name;
    try {
      const ToyImage img = generate_toy_image(
          model, prompts.prompts[i],
          derive_seed(metrics.gen_seed, std::string_view("eval-gen"),
                      static_cast<std::uint64_t>(i)));
      write_toy_image(path, img);
      image_paths.push_back(path);
      image_prompts.push_back(prompts.prompts[i]);
    } catch (const BackendFault& e) {
      std::fprintf(stderr, "[ccrt] warning: generation failed for prompt %zu: %s\n",
                   i, e.what());
      report.complete = false;
    }
  }

  const bool any_metric =
      metrics.rr_cls || metrics.rr_llm || !metrics.align_scorers.empty();
  if (!any_metric) report.complete = false;  // zero-entry report is flagged

  if (!image_paths.empty() && metrics.rr_cls) {
    const ConceptClassifier classifier =
        ConceptClassifier::load(metrics.classifier_artifact);
    const RrClsResult r = rr_cls(classifier, image_paths);
    nlohmann::json raw = nlohmann::json::array();
    for (const auto& [path, pred] : r.raw)
      raw.push_back({{"image", path}, {"prediction", pred}});
    report.metrics.push_back({"rr-cls", r.value, r.n, std::move(raw)});
  }

  if (!image_paths.empty() && metrics.rr_llm) {
    if (gateway == nullptr)
      throw ConfigError("rr-llm metric requires an LLM gateway");
    const RrLlmResult r =
        rr_llm(*gateway, image_paths, metrics.references, metrics.concept_name);
    nlohmann::json raw = nlohmann::json::array();
    for (const auto& [path, verdict] : r.raw)
      raw.push_back({{"image", path}, {"verdict", verdict}});
    raw.push_back({{"null_rate", r.null_rate},
                   {"value_null_as_removed", r.value_null_as_removed},
                   {"n_unjudged", r.n_unjudged}});
    report.metrics.push_back({"rr-llm", r.value, r.n_judged, std::move(raw)});
  }

  for (const std::string& scorer_name : metrics.align_scorers) {
    const ScorerFn scorer = get_scorer(scorer_name);
    nlohmann::json raw = nlohmann::json::array();
    double sum = 0.0;
    for (std::size_t i = 0; i < image_paths.size(); ++i) {
      const double s = scorer(image_prompts[i], image_paths[i]);
      sum += s;
      raw.push_back({{"image", image_paths[i].string()}, {"score", s}});
    }
    const int n = static_cast<int>(image_paths.size());
    report.metrics.push_back({"align:" + scorer_name, n ? sum / n : 0.0, n,
                              std::move(raw)});
  }

  report.finished_at = iso8601_now();
  return report;
}

void write_report(const fs::path& file, const EvaluationReport& report) {
  fs::create_directories(file.parent_path());
  nlohmann::ordered_json j;
  j["checkpoint"] = report.checkpoint_id;
  j["prompt_set"] = report.prompt_set_id;
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& m : report.metrics)
    metrics.push_back(
        {{"name", m.name}, {"value", m.value}, {"n", m.n}, {"raw", m.raw}});
  j["metrics"] = metrics;
  j["complete"] = report.complete;
  j["timestamps"] = {{"started", report.started_at}, {"finished", report.finished_at}};
  const fs::path tmp = file.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc);
    if (!out) throw InputError("cannot write report " + file.string());
    out << j.dump(2) << "\n";
  }
  fs::rename(tmp, file);
}

EvaluationReport read_report(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw NotFoundError("report not found: " + file.string());
  nlohmann::json j;
  in >> j;
  EvaluationReport report;
  report.checkpoint_id = j.at("checkpoint").get<std::string>();
  report.prompt_set_id = j.value("prompt_set", "");
  for (const auto& m : j.at("metrics"))
    report.metrics.push_back({m.at("name").get<std::string>(),
                              m.at("value").get<double>(), m.at("n").get<int>(),
                              m.value("raw", nlohmann::json::array())});
  report.complete = j.value("complete", true);
  if (j.contains("timestamps")) {
    report.started_at = j["timestamps"].value("started", "");
    report.finished_at = j["timestamps"].value("finished", "");
  }
  return report;
}

}  // namespace ccrt::eval
