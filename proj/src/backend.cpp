// SPDX-License-Identifier: Apache-2.0
#include "ccrt/backend.hpp"

#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ccrt/digest.hpp"
#include "ccrt/numeric.hpp"
#include "ccrt/rng.hpp"
#include "toy_model.hpp"

namespace ccrt::backend {

namespace fs = std::filesystem;

std::vector<std::string> tokenize_condition(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  for (char c : text) {
    unsigned char uc = static_cast<unsigned char>(c);
    if (std::isalnum(uc)) {
      cur.push_back(static_cast<char>(std::tolower(uc)));
    } else if (!cur.empty()) {
      tokens.push_back(cur);
      cur.clear();
    }
  }
  if (!cur.empty()) tokens.push_back(cur);
  return tokens;
}

TrainableModel& ModelHandle::trainable() {
  if (role_ == Role::kTeacherFrozen)
    throw InputError("teacher-frozen handle rejects parameter updates");
  auto* t = dynamic_cast<TrainableModel*>(model_.get());
  if (t == nullptr) throw BackendFault("backend does not support training");
  return *t;
}

ModelHandle make_toy_teacher(const ToyConfig& cfg) {
  return ModelHandle(Role::kTeacherFrozen, std::make_shared<ToyModel>(cfg));
}

ModelHandle make_backend(const nlohmann::json& params) {
  const std::string kind = params.value("kind", "toy");
  if (kind == "checkpoint") {
    // Frozen teacher loaded from a stored checkpoint.
    const std::string run_dir = params.value("run_dir", "");
    const std::string id = params.value("id", "");
    if (run_dir.empty() || id.empty())
      throw ConfigError("backend kind 'checkpoint' requires run_dir and id");
    ModelHandle loaded = load_checkpoint(run_dir, id);
    ModelHandle teacher(Role::kTeacherFrozen, loaded.model().clone(),
                        loaded.lineage());
    teacher.set_source_checkpoint_id(id);
    return teacher;
  }
  if (kind != "toy") throw ConfigError("unknown backend kind '" + kind + "'");
  ToyConfig cfg;
  if (params.contains("latent_shape"))
    cfg.latent_shape = params.at("latent_shape").get<std::vector<int>>();
  cfg.t_max = params.value("t_max", cfg.t_max);
  cfg.hidden_dim = params.value("hidden_dim", cfg.hidden_dim);
  cfg.embed_dim = params.value("embed_dim", cfg.embed_dim);
  cfg.vocab_size = params.value("vocab_size", cfg.vocab_size);
  cfg.init_seed = params.value("init_seed", cfg.init_seed);
  cfg.activation = params.value("activation", cfg.activation);
  cfg.embed_scale = params.value("embed_scale", cfg.embed_scale);
  cfg.skip_gain = params.value("skip_gain", cfg.skip_gain);
  return make_toy_teacher(cfg);
}

std::vector<double> seeded_noise_latent(const Model& model, std::uint64_t seed) {
  Rng rng(derive_seed(seed, std::string_view("latent-noise")));
  std::vector<double> x(static_cast<std::size_t>(model.latent_size()));
  for (double& v : x) v = rng.normal();
  return x;
}

NoisePrediction predict_noise(const ModelHandle& model, const LatentSample& x,
                              const std::optional<Condition>& cond) {
  const Model& m = model.model();
  if (x.timestep < 0 || x.timestep >= m.t_max())
    throw InputError("predict_noise: timestep out of range");
  if (static_cast<int>(x.data.size()) != m.latent_size())
    throw InputError("predict_noise: latent shape mismatch");
  const Condition* c = cond.has_value() ? &*cond : nullptr;
  return NoisePrediction{m.predict(x.data, c, x.timestep)};
}

LatentSample sample_partial(const ModelHandle& model, const Condition& cond,
                            int t, std::uint64_t seed) {
  const Model& m = model.model();
  if (t < 0 || t >= m.t_max())
    throw InputError("sample_partial: timestep out of range");

  LatentSample out;
  out.seed = seed;
  out.data = seeded_noise_latent(m, seed);

  // Deterministic reverse diffusion (DDIM-style, eta = 0) from pure noise at
  // t_max-1 down to the requested timestep.
  for (int s = m.t_max() - 1; s > t; --s) {
    std::vector<double> eps = m.predict(out.data, &cond, s);
    const double ab_s = m.alpha_bar(s);
    const double ab_prev = m.alpha_bar(s - 1);
    const double sq_ab_s = std::sqrt(ab_s);
    const double sq_one_minus_s = std::sqrt(1.0 - ab_s);
    const double sq_ab_prev = std::sqrt(ab_prev);
    const double sq_one_minus_prev = std::sqrt(1.0 - ab_prev);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      const double x0_hat = (out.data[i] - sq_one_minus_s * eps[i]) / sq_ab_s;
      out.data[i] = sq_ab_prev * x0_hat + sq_one_minus_prev * eps[i];
    }
  }
  out.timestep = t;
  if (!all_finite(out.data)) throw BackendFault("sample_partial: non-finite latent");
  return out;
}

ModelHandle clone_trainable(const ModelHandle& model) {
  ModelHandle clone(Role::kStudentTrainable, model.model().clone(),
                    model.lineage());
  if (model.source_checkpoint_id())
    clone.set_source_checkpoint_id(*model.source_checkpoint_id());
  return clone;
}

// ============================================================================
// Checkpoints
// ============================================================================

namespace {

constexpr char kParamsMagic[8] = {'C', 'C', 'R', 'T', 'P', 'R', 'M', '1'};

std::string role_to_string(Role role) {
  return role == Role::kTeacherFrozen ? "teacher-frozen" : "student-trainable";
}

Role role_from_string(const std::string& s) {
  if (s == "teacher-frozen") return Role::kTeacherFrozen;
  if (s == "student-trainable") return Role::kStudentTrainable;
  throw CorruptionError("checkpoint manifest: unknown role '" + s + "'");
}

nlohmann::json lineage_to_json(const std::vector<LineageEntry>& lineage) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& e : lineage)
    arr.push_back({{"checkpoint_id", e.checkpoint_id}, {"concept", e.concept_name}});
  return arr;
}

void write_params_bin(const fs::path& path, const std::vector<double>& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  out.write(kParamsMagic, sizeof(kParamsMagic));
  std::uint64_t count = params.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(params.data()),
            static_cast<std::streamsize>(params.size() * sizeof(double)));
  if (!out) throw InputError("short write to " + path.string());
}

std::vector<double> read_params_bin(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("missing parameter blob " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kParamsMagic, sizeof(magic)) != 0)
    throw CorruptionError("bad parameter blob header in " + path.string());
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  std::vector<double> params(count);
  in.read(reinterpret_cast<char*>(params.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw CorruptionError("truncated parameter blob " + path.string());
  return params;
}

}  // namespace

std::string save_checkpoint(ModelHandle& model, const fs::path& run_dir,
                            const std::optional<std::string>& new_concept) {
  const Model& m = model.model();
  const std::string content = m.content_hash();

  // The id commits to content, prior lineage and the concept being appended,
  // so a no-op training step still gets a distinct id while keeping the same
  // content hash.
  std::string preimage = content + lineage_to_json(model.lineage()).dump();
  if (new_concept) preimage += "|" + *new_concept;
  const std::string id = "ck-" + sha256_hex(preimage).substr(0, 16);

  if (new_concept) model.append_lineage({id, *new_concept});

  const fs::path ckpt_dir = run_dir / "checkpoints" / id;
  fs::create_directories(ckpt_dir);
  write_params_bin(ckpt_dir / "params.bin", m.export_params());

  nlohmann::json removed = nlohmann::json::array();
  for (const auto& e : model.lineage()) removed.push_back(e.concept_name);

  nlohmann::ordered_json manifest;
  manifest["id"] = id;
  manifest["parent_id"] = model.source_checkpoint_id()
                              ? nlohmann::json(*model.source_checkpoint_id())
                              : nlohmann::json(nullptr);
  manifest["removed_concepts"] = removed;
  manifest["lineage"] = lineage_to_json(model.lineage());
  manifest["role"] = role_to_string(model.role());
  manifest["hyperparameters"] = m.arch_json();
  manifest["content_hash"] = content;

  std::ofstream out(ckpt_dir / "manifest.json", std::ios::trunc);
  if (!out) throw InputError("cannot write checkpoint manifest");
  out << manifest.dump(2) << "\n";
  out.close();

  model.set_source_checkpoint_id(id);
  return id;
}

ModelHandle load_checkpoint(const fs::path& run_dir, const std::string& id) {
  const fs::path ckpt_dir = run_dir / "checkpoints" / id;
  const fs::path manifest_path = ckpt_dir / "manifest.json";
  if (!fs::exists(manifest_path))
    throw NotFoundError("checkpoint '" + id + "' not found under " +
                        (run_dir / "checkpoints").string());

  std::ifstream in(manifest_path);
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError("unreadable manifest for checkpoint '" + id +
                          "': " + e.what());
  }

  const nlohmann::json& arch = manifest.at("hyperparameters");
  if (arch.value("kind", "") != "toy")
    throw CorruptionError("checkpoint '" + id + "' uses unknown backend");
  auto model = std::make_shared<ToyModel>(ToyModel::config_from_arch(arch));
  model->import_params(read_params_bin(ckpt_dir / "params.bin"));

  const std::string expected = manifest.at("content_hash").get<std::string>();
  if (model->content_hash() != expected)
    throw CorruptionError("checkpoint '" + id +
                          "' failed integrity check (content hash mismatch)");

  std::vector<LineageEntry> lineage;
  for (const auto& e : manifest.at("lineage"))
    lineage.push_back({e.at("checkpoint_id").get<std::string>(),
                       e.at("concept").get<std::string>()});

  ModelHandle handle(role_from_string(manifest.at("role").get<std::string>()),
                     std::move(model), std::move(lineage));
  handle.set_source_checkpoint_id(id);
  return handle;
}

}  // namespace ccrt::backend
