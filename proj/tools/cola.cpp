#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "cola/cli/config.hpp"
#include "cola/core/runtime.hpp"
#include "cola/evalkit/evalkit.hpp"

namespace fs = std::filesystem;
using namespace cola;
using cli::json;

namespace {

volatile std::sig_atomic_t g_stop = 0;
void on_signal(int) { g_stop = 1; }

struct Common {
  std::string preset;
  std::string config;
  std::vector<std::string> set;
  std::string out_root;
  std::string out;  // explicit output dir (synth) or run dir
  std::uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* c, Common& o) {
  c->add_option("--preset", o.preset, "desk or paper-scale");
  c->add_option("--config", o.config, "JSON config file");
  c->add_option("--set", o.set, "dotted override, e.g. train.lambda=0.02")->take_all();
  c->add_option("--out-root", o.out_root, std::string("root for run directories (default $") + cli::kOutputRootEnv + " or ./runs)");
  c->add_option("--out", o.out, "output directory");
  c->add_option("--seed", o.seed, "top-level seed")->each([&o](const std::string&) { o.seed_given = true; });
}

cli::RunConfig resolve(const Common& o, std::vector<std::string> flag_overrides) {
  std::vector<std::string> all = o.set;
  if (o.seed_given) all.insert(all.begin(), "seed=" + std::to_string(o.seed));
  all.insert(all.end(), flag_overrides.begin(), flag_overrides.end());
  return cli::resolve_config(o.preset, o.config, all);
}

struct Run {
  fs::path dir;
  cli::DirLock lock;
};

Run open_run(const Common& o, const std::string& command, const cli::RunConfig& rc) {
  Run r;
  r.dir = o.out.empty() ? cli::make_run_dir(cli::output_root(o.out_root), command) : fs::path(o.out);
  r.lock = cli::DirLock(r.dir);
  json cfg = rc.tree;
  cfg["command"] = command;
  cfg["resolved_seed"] = rc.resolved_seed;
  cli::write_json_file(r.dir / "config.json", cfg);
  return r;
}

glyph::Corpus load_corpus(const std::string& dir) {
  if (dir.empty()) throw StateError("missing corpus: pass --corpus <dir> (created by `synth`)");
  return glyph::read_corpus(dir);
}

Archive load_checkpoint(const std::string& path) {
  if (path.empty()) throw StateError("missing checkpoint: pass --checkpoint <file> (created by `train`)");
  if (!fs::exists(path)) throw StateError("missing checkpoint '" + path + "' (run `train` first)");
  return Archive::read(path);
}

void print(const json& j) { std::cout << j.dump(2) << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"CoLa: compositional latent components for zero-shot glyph recognition"};
  app.require_subcommand(1);
  std::string command;

  // synth
  Common so;
  std::vector<std::string> splits;
  int classes = -1, primitives = -1;
  bool force = false;
  auto* synth = app.add_subcommand("synth", "generate a glyph corpus with split manifests");
  add_common(synth, so);
  synth->add_option("--classes", classes, "number of classes");
  synth->add_option("--primitives", primitives, "number of primitives");
  synth->add_option("--split", splits, "char:M:K or comp:N (repeatable)");
  synth->add_flag("--force", force, "overwrite an existing output directory");

  // train-teacher
  Common to;
  std::string tt_corpus, tt_split;
  auto* tteach = app.add_subcommand("train-teacher", "train and freeze the teacher encoder on a split's train classes");
  add_common(tteach, to);
  tteach->add_option("--corpus", tt_corpus, "corpus directory");
  tteach->add_option("--split", tt_split, "split name")->required();

  // train
  Common tr;
  std::string tr_corpus, tr_split, tr_teacher, tr_resume;
  double tr_lambda = -1;
  long tr_steps = -1;
  auto* train = app.add_subcommand("train", "train CoLa against a frozen teacher");
  add_common(train, tr);
  train->add_option("--corpus", tr_corpus, "corpus directory");
  train->add_option("--split", tr_split, "split name")->required();
  train->add_option("--teacher", tr_teacher, "teacher.cola from train-teacher");
  train->add_option("--resume", tr_resume, "checkpoint to continue from");
  train->add_option("--lambda", tr_lambda, "prediction-loss weight (default 0.01)");
  train->add_option("--steps", tr_steps, "total training steps");

  // eval
  Common ev;
  std::string ev_corpus, ev_split, ev_ckpt;
  int ev_trials = -1, ev_n = -1;
  bool ev_sampled = false;
  auto* eval = app.add_subcommand("eval", "zero-shot evaluation of a checkpoint");
  add_common(eval, ev);
  eval->add_option("--corpus", ev_corpus, "corpus directory");
  eval->add_option("--split", ev_split, "split name")->required();
  eval->add_option("--checkpoint", ev_ckpt, "checkpoint file");
  eval->add_option("--trials", ev_trials, "number of trials");
  eval->add_option("--templates", ev_n, "templates per class");
  eval->add_flag("--sampled", ev_sampled, "fresh eps and sampled latents per trial");

  // viz
  Common vo;
  std::string vz_ckpt, vz_image, vz_corpus;
  int vz_class = -1, vz_sample = 0;
  auto* viz = app.add_subcommand("viz", "component attention overlays for one image");
  add_common(viz, vo);
  viz->add_option("--checkpoint", vz_ckpt, "checkpoint file");
  viz->add_option("--image", vz_image, "PNG input");
  viz->add_option("--corpus", vz_corpus, "corpus directory (with --class)");
  viz->add_option("--class", vz_class, "class id");
  viz->add_option("--sample", vz_sample, "sample id");

  // retrieve
  Common ro;
  std::string rt_ckpt, rt_corpus, rt_split, rt_alt;
  int rt_class = -1, rt_sample = 0, rt_k = -1;
  auto* retrieve = app.add_subcommand("retrieve", "top-k retrieval over corpus samples, or a cross-style report");
  add_common(retrieve, ro);
  retrieve->add_option("--checkpoint", rt_ckpt, "checkpoint file");
  retrieve->add_option("--corpus", rt_corpus, "corpus directory");
  retrieve->add_option("--split", rt_split, "restrict candidates to the split's test classes");
  retrieve->add_option("--class", rt_class, "query class id");
  retrieve->add_option("--sample", rt_sample, "query sample id");
  retrieve->add_option("--k", rt_k, "number of neighbours (default 10)");
  retrieve->add_option("--alt-corpus", rt_alt, "corpus from another primitive bank: run the cross-style report");

  // time
  Common tm;
  std::string tm_ckpt, tm_corpus, tm_split;
  int tm_batches = -1, tm_bs = -1;
  auto* timecmd = app.add_subcommand("time", "average per-batch inference time");
  add_common(timecmd, tm);
  timecmd->add_option("--checkpoint", tm_ckpt, "checkpoint file");
  timecmd->add_option("--corpus", tm_corpus, "corpus directory");
  timecmd->add_option("--split", tm_split, "split name")->required();
  timecmd->add_option("--batches", tm_batches, "timed batches");
  timecmd->add_option("--batch-size", tm_bs, "batch size (default 32)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  command = app.get_subcommands().front()->get_name();
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);

  fs::path run_dir;
  try {
    if (command == "synth") {
      std::vector<std::string> ov;
      if (classes >= 0) ov.push_back("corpus.num_classes=" + std::to_string(classes));
      if (primitives >= 0) ov.push_back("corpus.num_primitives=" + std::to_string(primitives));
      if (!splits.empty()) ov.push_back("corpus.splits=" + json(splits).dump());
      auto rc = resolve(so, ov);
      const fs::path dir = so.out.empty() ? cli::make_run_dir(cli::output_root(so.out_root), "corpus") : fs::path(so.out);
      run_dir = dir;
      if (!so.out.empty() && fs::exists(dir) && !fs::is_empty(dir)) {
        if (!force) throw StateError("output directory '" + dir.string() + "' exists (use --force to overwrite)");
        fs::remove_all(dir);
      }
      cli::DirLock lock(dir);
      const auto corpus = glyph::generate_corpus(rc.corpus());
      glyph::write_corpus(corpus, dir);
      json cfg = rc.tree;
      cfg["command"] = command;
      cfg["resolved_seed"] = rc.resolved_seed;
      cli::write_json_file(dir / "config.json", cfg);
      json summary = {{"corpus", dir.string()},
                      {"classes", corpus.classes.size()},
                      {"primitives", corpus.bank.size()},
                      {"corpus_hash", trainer::corpus_hash(corpus)}};
      for (const auto& [name, s] : corpus.splits)
        summary["splits"][name] = {{"train_classes", s.train_classes.size()},
                                   {"test_classes", s.test_classes.size()},
                                   {"chance_level", s.chance_level()}};
      print(summary);
    } else if (command == "train-teacher") {
      auto rc = resolve(to, {});
      const auto corpus = load_corpus(tt_corpus);
      const auto split = cli::find_split(corpus, tt_split);
      auto run = open_run(to, command, rc);
      run_dir = run.dir;
      auto teacher = model::train_teacher<float>(corpus, split, rc.model(), rc.teacher());
      model::save_teacher(run.dir / "teacher.cola", teacher);
      json m = {{"split", split.name()},
                {"corpus", tt_corpus},
                {"corpus_hash", trainer::corpus_hash(corpus)},
                {"head_accuracy", teacher.head_accuracy()},
                {"train_classes", teacher.train_classes().size()},
                {"teacher", (run.dir / "teacher.cola").string()}};
      cli::write_json_file(run.dir / "manifest.json", m);
      print(m);
    } else if (command == "train") {
      std::vector<std::string> ov;
      if (tr_lambda >= 0) ov.push_back("train.lambda=" + json(tr_lambda).dump());
      if (tr_steps >= 0) ov.push_back("train.total_steps=" + std::to_string(tr_steps));
      auto rc = resolve(tr, ov);
      const auto corpus = load_corpus(tr_corpus);
      const auto split = cli::find_split(corpus, tr_split);
      trainer::TrainState<float> state;
      std::string teacher_hash;
      if (!tr_resume.empty()) {
        state = trainer::load_state<float>(load_checkpoint(tr_resume));
        if (state.corpus_hash != trainer::corpus_hash(corpus))
          throw StateError("checkpoint '" + tr_resume + "' was trained on a different corpus");
        if (state.split_name != split.name())
          throw StateError("checkpoint '" + tr_resume + "' was trained on split " + state.split_name);
        state.config.total_steps = rc.train().total_steps;
      } else {
        if (tr_teacher.empty() || !fs::exists(tr_teacher))
          throw StateError("missing teacher artifact" + (tr_teacher.empty() ? std::string() : " '" + tr_teacher + "'") +
                           ": run `train-teacher` and pass --teacher <run>/teacher.cola");
        const Archive ta = Archive::read(tr_teacher);
        teacher_hash = ta.hash();
        const auto mc = rc.model();
        auto teacher = model::load_teacher<float>(ta);
        const auto tc = teacher.config();
        if (tc.teacher_channels != mc.teacher_channels || tc.teacher_grid != mc.teacher_grid ||
            tc.model_side() != mc.model_side() || tc.teacher_hidden != mc.teacher_hidden)
          throw StateError("teacher '" + tr_teacher + "' was built for a different model config");
        model::ColaModel<float> m(mc);
        m.set_teacher(std::move(teacher));
        state = trainer::init_training(std::move(m), corpus, split, rc.train());
      }
      auto run = open_run(tr, command, rc);
      run_dir = run.dir;
      std::ofstream metrics(run.dir / "metrics.ndjson", std::ios::app);
      const fs::path ckpt = run.dir / "checkpoint.cola";
      trainer::TrainHooks<float> hooks;
      const long log_every = std::max<long>(1, state.config.log_every);
      hooks.on_step = [&](const trainer::StepRecord<float>& r) {
        if (r.step % log_every == 0 || r.step == state.config.total_steps) metrics << trainer::to_json(r).dump() << "\n" << std::flush;
      };
      hooks.on_checkpoint = [&](const trainer::TrainState<float>& s) { trainer::save_state(s).write(ckpt); };
      hooks.should_stop = [] { return g_stop != 0; };
      trainer::run_training(state, corpus, hooks);
      const Archive saved = Archive::read(ckpt);
      json manifest = {{"split", split.name()},
                       {"corpus", tr_corpus},
                       {"corpus_hash", state.corpus_hash},
                       {"teacher", tr_teacher},
                       {"teacher_hash", teacher_hash},
                       {"resumed_from", tr_resume},
                       {"step", state.step},
                       {"total_steps", state.config.total_steps},
                       {"phase_switch_step", state.phase_switch_step},
                       {"completed", state.step >= state.config.total_steps},
                       {"wallclock_seconds", state.wallclock},
                       {"checkpoint", ckpt.string()},
                       {"checkpoint_hash", saved.hash()},
                       {"train", trainer::to_json(state.config)},
                       {"model", model::to_json(state.model.config())}};
      cli::write_json_file(run.dir / "manifest.json", manifest);
      print(manifest);
      if (g_stop) return 130;
    } else if (command == "eval") {
      std::vector<std::string> ov;
      if (ev_trials >= 0) ov.push_back("eval.trials=" + std::to_string(ev_trials));
      if (ev_n >= 0) ov.push_back("eval.templates_per_class=" + std::to_string(ev_n));
      if (ev_sampled) ov.push_back("eval.sampled=true");
      auto rc = resolve(ev, ov);
      const Archive a = load_checkpoint(ev_ckpt);
      const auto corpus = load_corpus(ev_corpus);
      const auto split = cli::find_split(corpus, ev_split);
      auto m = model::load_model<float>(a);
      const auto ec = rc.eval();
      evalkit::EvalOptions eo;
      eo.templates_per_class = ec.templates_per_class;
      eo.trials = ec.trials;
      eo.sampled = ec.sampled;
      eo.seed = ec.seed;
      eo.trained_classes = trainer::trained_classes_of(a);
      auto report = evalkit::zero_shot_eval(m, corpus, split, eo);
      auto run = open_run(ev, command, rc);
      run_dir = run.dir;
      json j = evalkit::to_json(report);
      j["checkpoint"] = ev_ckpt;
      j["checkpoint_hash"] = a.hash();
      cli::write_json_file(run.dir / "eval_report.json", j);
      print(j);
    } else if (command == "viz") {
      auto rc = resolve(vo, {});
      const Archive a = load_checkpoint(vz_ckpt);
      auto m = model::load_model<float>(a);
      Image img;
      if (!vz_image.empty()) {
        img = read_png(vz_image);
      } else if (!vz_corpus.empty() && vz_class >= 0) {
        const auto corpus = load_corpus(vz_corpus);
        img = corpus.samples.at(static_cast<std::size_t>(vz_class)).at(static_cast<std::size_t>(vz_sample));
      } else {
        throw InvalidArgument("viz needs --image or --corpus with --class");
      }
      auto run = open_run(vo, command, rc);
      run_dir = run.dir;
      const auto maps = evalkit::visualize_components(m, img, run.dir, m.eps_mean());
      json j = {{"panel", (run.dir / "panel.png").string()}, {"components", maps.overlays.size()}};
      print(j);
    } else if (command == "retrieve") {
      std::vector<std::string> ov;
      if (rt_k >= 0) ov.push_back("eval.k=" + std::to_string(rt_k));
      auto rc = resolve(ro, ov);
      const auto ec = rc.eval();
      const Archive a = load_checkpoint(rt_ckpt);
      auto m = model::load_model<float>(a);
      if (!rt_alt.empty()) {
        const auto alt = load_corpus(rt_alt);
        evalkit::CrossStyleOptions co;
        co.k = ec.k;
        co.templates_per_class = ec.templates_per_class;
        co.seed = ec.seed;
        auto r = evalkit::cross_style_eval(m, alt, co, m.eps_mean());
        auto run = open_run(ro, command, rc);
        run_dir = run.dir;
        evalkit::write_cross_style(r, run.dir);
        json j = evalkit::to_json(r);
        cli::write_json_file(run.dir / "cross_style.json", j);
        print(j["report"]);
      } else {
        const auto corpus = load_corpus(rt_corpus);
        std::vector<int> cls;
        if (!rt_split.empty())
          cls = cli::find_split(corpus, rt_split).test_classes;
        else
          for (const auto& g : corpus.classes) cls.push_back(g.class_id);
        if (rt_class < 0) throw InvalidArgument("retrieve needs --class (query class id)");
        std::vector<Image> pool;
        std::vector<json> ids;
        for (int c : cls)
          for (std::size_t i = 0; i < corpus.samples.at(static_cast<std::size_t>(c)).size(); ++i) {
            pool.push_back(corpus.samples[static_cast<std::size_t>(c)][i]);
            ids.push_back({{"class", c}, {"sample", i}});
          }
        const Image& q = corpus.samples.at(static_cast<std::size_t>(rt_class)).at(static_cast<std::size_t>(rt_sample));
        const auto top = matcher::retrieve_topk(q, pool, m, m.eps_mean(), static_cast<std::size_t>(ec.k));
        auto run = open_run(ro, command, rc);
        run_dir = run.dir;
        json j = {{"query", {{"class", rt_class}, {"sample", rt_sample}}}, {"results", json::array()}};
        std::vector<RgbImage> row{evalkit::gray_to_rgb(q)};
        for (const auto& t : top) {
          j["results"].push_back({{"rank", j["results"].size() + 1}, {"score", t.score}, {"image", ids[t.index]}});
          row.push_back(evalkit::gray_to_rgb(pool[t.index]));
        }
        write_png(run.dir / "retrieval.png", evalkit::hconcat(row));
        cli::write_json_file(run.dir / "retrieval.json", j);
        print(j);
      }
    } else if (command == "time") {
      std::vector<std::string> ov;
      if (tm_batches >= 0) ov.push_back("eval.timing_batches=" + std::to_string(tm_batches));
      if (tm_bs >= 0) ov.push_back("eval.batch_size=" + std::to_string(tm_bs));
      auto rc = resolve(tm, ov);
      const auto ec = rc.eval();
      const Archive a = load_checkpoint(tm_ckpt);
      auto m = model::load_model<float>(a);
      const auto corpus = load_corpus(tm_corpus);
      const auto split = cli::find_split(corpus, tm_split);
      auto bank = matcher::encode_templates(corpus, split.test_classes, m, m.eps_mean());
      std::vector<const Image*> imgs;
      for (int c : split.test_classes)
        for (const auto& img : corpus.samples.at(static_cast<std::size_t>(c))) imgs.push_back(&img);
      auto report = evalkit::timing_harness(m, bank, imgs, ec.timing_batches, ec.batch_size);
      auto run = open_run(tm, command, rc);
      run_dir = run.dir;
      cli::write_json_file(run.dir / "timing_report.json", evalkit::to_json(report));
      print(evalkit::to_json(report));
    }
  } catch (const cola::Error& e) {
    const json rec = cli::error_record(command, e.kind(), e.what());
    std::cerr << rec.dump() << std::endl;
    if (!run_dir.empty() && fs::exists(run_dir)) cli::write_json_file(run_dir / "error.json", rec);
    return 2;
  } catch (const std::exception& e) {
    const json rec = cli::error_record(command, "internal-error", e.what());
    std::cerr << rec.dump() << std::endl;
    if (!run_dir.empty() && fs::exists(run_dir)) cli::write_json_file(run_dir / "error.json", rec);
    return 3;
  }
  return 0;
}
