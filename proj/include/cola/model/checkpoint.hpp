#pragma once

#include <filesystem>

#include "cola/core/archive.hpp"
#include "cola/model/cola.hpp"

namespace cola::model {

inline constexpr int kCheckpointVersion = 1;

template <class T>
void put_params(Archive& a, const std::string& prefix, const ParamStore<T>& ps) {
  for (const auto& [name, p] : ps) a.put(prefix + name, p.value);
}

template <class T>
void load_params(const Archive& a, const std::string& prefix, ParamStore<T>& ps) {
  for (auto& [name, p] : ps) {
    Mat<T> v = a.get<T>(prefix + name);
    if (v.rows() != p.value.rows() || v.cols() != p.value.cols())
      throw ShapeError("checkpoint tensor '" + name + "' has the wrong shape");
    p.value = std::move(v);
  }
}

// Model config, CoLa parameters (including the eps Gaussian) and the teacher.
template <class T>
void put_model(Archive& a, const ColaModel<T>& m) {
  a.meta["kind"] = "cola-model";
  a.meta["checkpoint_version"] = kCheckpointVersion;
  a.meta["model_config"] = to_json(m.config());
  a.meta["teacher"] = {{"trained", m.teacher().trained()},
                       {"train_classes", m.teacher().train_classes()},
                       {"head_accuracy", m.teacher().head_accuracy()}};
  put_params(a, "model/", m.params());
  put_params(a, "teacher/", m.teacher().params());
}

template <class T>
Teacher<T> load_teacher(const Archive& a) {
  const auto cfg = model_config_from_json(a.meta.at("model_config"));
  const auto& tj = a.meta.at("teacher");
  if (!tj.at("trained").get<bool>()) throw StateError("archive holds an untrained teacher");
  Teacher<T> t(cfg);
  ParamStore<T> ps = t.params();
  load_params(a, "teacher/", ps);
  t.restore(std::move(ps), tj.at("train_classes").get<std::vector<int>>(), tj.at("head_accuracy").get<double>());
  return t;
}

template <class T>
ColaModel<T> load_model(const Archive& a) {
  if (a.meta.value("checkpoint_version", 0) != kCheckpointVersion)
    throw IoError("unsupported checkpoint version " + a.meta.value("checkpoint_version", nlohmann::json(0)).dump());
  ColaModel<T> m(model_config_from_json(a.meta.at("model_config")));
  load_params(a, "model/", m.params());
  const auto& tj = a.meta.at("teacher");
  if (tj.at("trained").get<bool>()) {
    m.set_teacher(load_teacher<T>(a));
  }
  return m;
}

template <class T>
void save_teacher(const std::filesystem::path& path, const Teacher<T>& t) {
  Archive a;
  a.meta["kind"] = "cola-teacher";
  a.meta["checkpoint_version"] = kCheckpointVersion;
  a.meta["model_config"] = to_json(t.config());
  a.meta["teacher"] = {
      {"trained", t.trained()}, {"train_classes", t.train_classes()}, {"head_accuracy", t.head_accuracy()}};
  put_params(a, "teacher/", t.params());
  a.write(path);
}

}  // namespace cola::model
