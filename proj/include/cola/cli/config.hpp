#pragma once

#include <fcntl.h>
#include <unistd.h>

#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cola/glyphsynth/corpus.hpp"
#include "cola/model/teacher.hpp"
#include "cola/trainer/trainer.hpp"

namespace cola::cli {

using nlohmann::json;

inline constexpr const char* kOutputRootEnv = "COLA_OUTPUT_ROOT";

struct EvalConfig {
  int templates_per_class = 10;
  int trials = 3;
  bool sampled = false;
  std::uint64_t seed = 0;
  int timing_batches = 20;
  int batch_size = 32;
  int k = 10;
};

inline json to_json(const EvalConfig& c) {
  return {{"templates_per_class", c.templates_per_class},
          {"trials", c.trials},
          {"sampled", c.sampled},
          {"seed", c.seed},
          {"timing_batches", c.timing_batches},
          {"batch_size", c.batch_size},
          {"k", c.k}};
}

inline EvalConfig eval_config_from_json(const json& j, EvalConfig c = {}) {
  c.templates_per_class = j.value("templates_per_class", c.templates_per_class);
  c.trials = j.value("trials", c.trials);
  c.sampled = j.value("sampled", c.sampled);
  c.seed = j.value("seed", c.seed);
  c.timing_batches = j.value("timing_batches", c.timing_batches);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.k = j.value("k", c.k);
  return c;
}

// Training schedule sized for a single CPU core.
inline trainer::TrainConfig desk_train_config() {
  trainer::TrainConfig c;
  c.total_steps = 1200;
  c.warmup_steps = 60;
  c.halve_every_steps = 400;
  c.lr_backbone_peak = 1e-3;
  c.lr_decoder_peak = 3e-3;
  return c;
}

inline model::TeacherTrainConfig desk_teacher_config() {
  model::TeacherTrainConfig c;
  c.steps = 800;
  return c;
}

// Sections: corpus, model, teacher, train, eval. Section seeds left out of a
// preset are filled from the top-level seed when the config is resolved.
inline json preset(const std::string& name) {
  json corpus = glyph::to_json(glyph::CorpusConfig{});
  corpus.erase("seed");
  json j;
  if (name == "desk") {
    j = {{"preset", "desk"},
         {"seed", 0},
         {"corpus", corpus},
         {"model", model::to_json(model::desk_preset())},
         {"teacher", model::to_json(desk_teacher_config())},
         {"train", trainer::to_json(desk_train_config())},
         {"eval", to_json(EvalConfig{})}};
  } else if (name == "paper-scale") {
    j = {{"preset", "paper-scale"},
         {"seed", 0},
         {"corpus", corpus},
         {"model", model::to_json(model::paper_preset())},
         {"teacher", model::to_json(model::TeacherTrainConfig{})},
         {"train", trainer::to_json(trainer::TrainConfig{})},
         {"eval", to_json(EvalConfig{})}};
  } else {
    throw InvalidArgument("unknown preset '" + name + "' (expected desk or paper-scale)");
  }
  j["model"].erase("init_seed");
  for (const char* s : {"teacher", "train", "eval"}) j[s].erase("seed");
  return j;
}

// "a.b.c=value": value parsed as JSON when it parses, otherwise kept as a
// string.
inline void apply_override(json& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0)
    throw InvalidArgument("override '" + assignment + "' must look like section.key=value");
  const std::string path = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &cfg;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw InvalidArgument("override '" + assignment + "' has an empty key");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

inline void merge_into(json& base, const json& patch) {
  for (auto it = patch.begin(); it != patch.end(); ++it) {
    if (it.value().is_object() && base.contains(it.key()) && base[it.key()].is_object())
      merge_into(base[it.key()], it.value());
    else
      base[it.key()] = it.value();
  }
}

struct RunConfig {
  json tree;
  std::string origin;  // config file (or "preset:<name>") plus overrides
  std::uint64_t resolved_seed = 0;

  glyph::CorpusConfig corpus() const { return glyph::corpus_config_from_json(tree.at("corpus")); }
  model::ModelConfig model() const { return model::model_config_from_json(tree.at("model")); }
  model::TeacherTrainConfig teacher() const { return model::teacher_config_from_json(tree.at("teacher")); }
  trainer::TrainConfig train() const { return trainer::train_config_from_json(tree.at("train")); }
  EvalConfig eval() const { return eval_config_from_json(tree.at("eval")); }
};

// Preset, then the config file, then overrides in order; later wins.
inline RunConfig resolve_config(const std::string& preset_name, const std::string& config_file,
                                const std::vector<std::string>& overrides) {
  RunConfig rc;
  std::string name = preset_name;
  json file;
  if (!config_file.empty()) {
    std::ifstream is(config_file);
    if (!is) throw IoError("cannot read config '" + config_file + "'");
    file = json::parse(is, nullptr, false);
    if (file.is_discarded() || !file.is_object()) throw InvalidArgument("config '" + config_file + "' is not a JSON object");
    if (preset_name.empty() && file.contains("preset")) name = file["preset"].get<std::string>();
  }
  if (name.empty()) name = "desk";
  rc.tree = preset(name);
  if (!file.is_null()) merge_into(rc.tree, file);
  rc.origin = config_file.empty() ? "preset:" + name : config_file;
  for (const auto& o : overrides) {
    apply_override(rc.tree, o);
    rc.origin += " " + o;
  }
  rc.resolved_seed = rc.tree.value("seed", std::uint64_t{0});
  auto fill = [&](const char* section, const char* key) {
    if (!rc.tree[section].contains(key)) rc.tree[section][key] = rc.resolved_seed;
  };
  fill("corpus", "seed");
  fill("model", "init_seed");
  fill("teacher", "seed");
  fill("train", "seed");
  fill("eval", "seed");
  rc.tree["origin"] = rc.origin;
  // Parse every section once so bad values fail before any work starts.
  rc.model().validate();
  rc.train().validate();
  (void)rc.corpus();
  (void)rc.teacher();
  (void)rc.eval();
  return rc;
}

inline std::filesystem::path output_root(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

inline std::string timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", &tm);
  return buf;
}

// Exclusive ownership of an output directory for the life of the process.
class DirLock {
 public:
  DirLock() = default;
  explicit DirLock(const std::filesystem::path& dir) : path_(dir / ".lock") {
    std::filesystem::create_directories(dir);
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) throw StateError("output directory '" + dir.string() + "' is locked by another run (" + path_.string() + ")");
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd_, pid.data(), pid.size());
  }
  DirLock(const DirLock&) = delete;
  DirLock& operator=(const DirLock&) = delete;
  DirLock(DirLock&& o) noexcept : path_(std::move(o.path_)), fd_(o.fd_) { o.fd_ = -1; }
  DirLock& operator=(DirLock&& o) noexcept {
    release();
    path_ = std::move(o.path_);
    fd_ = o.fd_;
    o.fd_ = -1;
    return *this;
  }
  ~DirLock() { release(); }

 private:
  void release() {
    if (fd_ >= 0) {
      ::close(fd_);
      std::error_code ec;
      std::filesystem::remove(path_, ec);
      fd_ = -1;
    }
  }
  std::filesystem::path path_;
  int fd_ = -1;
};

// <root>/<command>-<UTC timestamp>[-n], created fresh.
inline std::filesystem::path make_run_dir(const std::filesystem::path& root, const std::string& command) {
  const std::string base = command + "-" + timestamp();
  std::filesystem::create_directories(root);
  for (int n = 0;; ++n) {
    auto dir = root / (n == 0 ? base : base + "-" + std::to_string(n));
    std::error_code ec;
    if (std::filesystem::create_directory(dir, ec)) return dir;
    if (ec) throw IoError("cannot create run directory '" + dir.string() + "': " + ec.message());
  }
}

inline void write_json_file(const std::filesystem::path& p, const json& j) {
  std::ofstream os(p);
  if (!os) throw IoError("cannot write '" + p.string() + "'");
  os << j.dump(2) << "\n";
}

// "char:120:80" and "char_120_80" both name the same split.
inline std::string split_file_name(const std::string& s) {
  std::string out = s;
  for (char& c : out)
    if (c == ':') c = '_';
  return out;
}

// The corpus' stored manifest if present, otherwise one built from the spec.
inline glyph::SplitManifest find_split(const glyph::Corpus& corpus, const std::string& spec) {
  const std::string name = split_file_name(spec);
  auto it = corpus.splits.find(name);
  if (it != corpus.splits.end()) return it->second;
  std::string text = spec;
  for (char& c : text)
    if (c == '_') c = ':';
  return glyph::make_split_from_spec(text, corpus.classes, corpus.bank.size(), corpus.config.seed);
}

inline json error_record(const std::string& command, const std::string& kind, const std::string& message) {
  return {{"error", {{"command", command}, {"kind", kind}, {"message", message}}}};
}

}  // namespace cola::cli
