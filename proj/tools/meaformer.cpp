// meaformer: command-line front end (generate | train | eval | measure | serve | assess).

#include <cstdlib>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <httplib.h>

#include "meaformer/data/dataset.hpp"
#include "meaformer/pipeline/evaluate.hpp"
#include "meaformer/pipeline/response.hpp"
#include "meaformer/pipeline/train.hpp"
#include "meaformer/service/service.hpp"

using namespace meaformer;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kDataError = 3, kDiverged = 4 };

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Explicit paths win; otherwise relative names are looked up under
/// MEAF_CHECKPOINT_DIR.
fs::path resolve_checkpoint(const std::string& given, const char* fallback) {
  const fs::path p = given.empty() ? fs::path(fallback) : fs::path(given);
  if (fs::exists(p) || p.is_absolute()) return p;
  if (const char* dir = std::getenv("MEAF_CHECKPOINT_DIR")) {
    const fs::path q = fs::path(dir) / p;
    if (fs::exists(q)) return q;
  }
  return p;
}

/// "file.mead#3" -> (file.mead, 3); no suffix means case 0.
std::pair<fs::path, size_t> parse_image_ref(const std::string& ref) {
  const auto hash = ref.rfind('#');
  if (hash == std::string::npos) return {ref, 0};
  try {
    return {ref.substr(0, hash), std::stoul(ref.substr(hash + 1))};
  } catch (const std::exception&) {
    throw UsageError("bad image reference '" + ref + "' (expected file.mead#index)");
  }
}

geom::Point parse_click(const std::string& text) {
  const auto comma = text.find(',');
  try {
    if (comma == std::string::npos) throw std::invalid_argument("missing comma");
    return {std::stod(text.substr(0, comma)), std::stod(text.substr(comma + 1))};
  } catch (const std::exception&) {
    throw UsageError("bad click '" + text + "' (expected x,y)");
  }
}

data::Phantom load_case(const fs::path& path, size_t index) {
  data::DatasetReader reader(path);
  if (index >= reader.size())
    throw data::DatasetError(data::DatasetError::Kind::Corrupt,
                             path.string() + " has " + std::to_string(reader.size()) + " cases, no #" +
                                 std::to_string(index));
  for (size_t i = 0;; ++i) {
    auto p = reader.next();
    if (i == index) return std::move(*p);
  }
}

struct GenerateArgs {
  size_t count = 100;
  uint64_t seed = 0;
  std::string out;
  int size = 64;
  double spacing = 0.8;
};

int run_generate(const GenerateArgs& a) {
  data::PhantomConfig cfg;
  cfg.height = cfg.width = a.size;
  cfg.spacing_mm_per_px = a.spacing;
  const auto phantoms = data::generate_dataset(a.count, a.seed, cfg);
  data::write_dataset(phantoms, a.out);
  std::cout << "wrote " << phantoms.size() << " phantoms to " << a.out << "\n";
  return kOk;
}

struct TrainArgs {
  std::string data, val, out, log, variant = "step2";
  int64_t steps = 2000;
  int batch = 8;
  double lr = 1e-3;
  uint64_t seed = 0;
  int size = 64, channels = 16;
  bool no_consistency = false, no_augment = false;
  int64_t log_every = 10, val_every = 100;
};

int run_train(const TrainArgs& a) {
  const auto variant = pipeline::variant_from_string(a.variant);
  auto cfg = pipeline::TrainConfig::desk(variant, a.steps);
  cfg.model = variant == pipeline::Variant::Step1 ? model::ModelConfig::step1(a.size, a.channels)
                                                  : model::ModelConfig::step2(a.size, a.channels);
  cfg.batch_size = a.batch;
  cfg.lr = a.lr;
  cfg.seed = a.seed;
  cfg.consistency = !a.no_consistency;
  cfg.augment = !a.no_augment;
  cfg.log_every = a.log_every;
  cfg.val_every = a.val_every;
  cfg.validate();

  const auto train_set = data::read_dataset(a.data);
  const auto val_set = a.val.empty() ? std::vector<data::Phantom>{} : data::read_dataset(a.val);
  std::ofstream log_file;
  std::ostream* sink = &std::cout;
  if (!a.log.empty()) {
    log_file.open(a.log);
    if (!log_file) throw data::DatasetError(data::DatasetError::Kind::Io, "cannot write " + a.log);
    sink = &log_file;
  }
  const auto r = pipeline::train(train_set, val_set, cfg, sink);
  model::write_checkpoint(r.checkpoint, a.out);
  std::cerr << "saved " << a.out;
  if (r.final_validation)
    std::cerr << " (val dice " << r.final_validation->dice << ", keypoint error " << r.final_validation->keypoint_px
              << " px)";
  std::cerr << "\n";
  return kOk;
}

struct EvalArgs {
  std::string data, step1, step2, rows, mode = "two-step";
  uint64_t seed = 0;
  int threads = 0;
};

int run_eval(const EvalArgs& a) {
  const pipeline::Measurer m(model::read_checkpoint(resolve_checkpoint(a.step1, "step1.meaf")),
                             model::read_checkpoint(resolve_checkpoint(a.step2, "step2.meaf")));
  pipeline::MeasureFn fn;
  if (a.mode == "two-step")
    fn = pipeline::two_step(m);
  else if (a.mode == "step2-on-truth")
    fn = pipeline::step2_on_truth(m);
  else
    throw UsageError("--mode must be two-step or step2-on-truth");
  const auto cases = data::read_dataset(a.data);
  const auto s = pipeline::evaluate(cases, fn, a.seed, a.threads);
  std::cout << pipeline::format_summary(s);
  if (!a.rows.empty()) {
    std::ofstream out(a.rows);
    out << pipeline::summary_rows(s);
    if (!out) throw data::DatasetError(data::DatasetError::Kind::Io, "cannot write " + a.rows);
  }
  return kOk;
}

struct MeasureArgs {
  std::string image, click, step1, step2;
  double spacing = 0.0;
};

int run_measure(const MeasureArgs& a) {
  const pipeline::Measurer m(model::read_checkpoint(resolve_checkpoint(a.step1, "step1.meaf")),
                             model::read_checkpoint(resolve_checkpoint(a.step2, "step2.meaf")));
  const auto [path, index] = parse_image_ref(a.image);
  const auto p = load_case(path, index);
  const double spacing = a.spacing > 0.0 ? a.spacing : p.spacing_mm_per_px;
  auto report = m.measure(p.image, parse_click(a.click), spacing);
  auto out = service::report_json(report);
  pipeline::score(report, p);
  out["truth"] = {{"box_iou", *report.box_iou},
                  {"dice", *report.dice},
                  {"long_mm", p.recist.long_length() * spacing},
                  {"short_mm", p.recist.short_length() * spacing}};
  std::cout << out.dump(2) << "\n";
  return kOk;
}

struct ServeArgs {
  std::string step1, step2, host = "127.0.0.1", static_dir;
  int port = 8080;
  std::vector<std::string> demos;
};

int run_serve(const ServeArgs& a) {
  service::ServiceOptions opt;
  opt.step1 = resolve_checkpoint(a.step1, "step1.meaf");
  opt.step2 = resolve_checkpoint(a.step2, "step2.meaf");
  for (const auto& d : a.demos) opt.demo_datasets[fs::path(d).stem().string()] = d;
  const service::MeasurementService svc(opt);
  auto server = service::make_server(svc, a.static_dir);
  if (!server->bind_to_port(a.host, a.port)) {
    std::cerr << "error: cannot bind " << a.host << ":" << a.port << "\n";
    return kFailure;
  }
  std::cerr << "listening on http://" << a.host << ":" << a.port << "\n";
  return server->listen_after_bind() ? kOk : kFailure;
}

int run_assess(double baseline, double followup) {
  const auto c = pipeline::classify_response(baseline, followup);
  std::cout << nlohmann::json{{"class", pipeline::to_string(c)},
                              {"code", pipeline::short_name(c)},
                              {"change_percent", 100.0 * (followup - baseline) / baseline}}
                   .dump()
            << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MeaFormer lesion measurement: phantom data, training, evaluation and serving"};
  app.set_config("--config", "", "INI/TOML file with option values (command-line flags win)");
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "Write a synthetic phantom dataset");
  g->add_option("--count", gen.count, "Number of phantoms")->capture_default_str();
  g->add_option("--seed", gen.seed, "Random seed")->capture_default_str();
  g->add_option("--out", gen.out, "Output .mead file")->required();
  g->add_option("--size", gen.size, "Image side in pixels")->capture_default_str();
  g->add_option("--spacing", gen.spacing, "Pixel spacing in mm")->capture_default_str();

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a step-1 or step-2 model");
  t->add_option("--data", tr.data, "Training dataset (.mead)")->required();
  t->add_option("--val", tr.val, "Validation dataset (.mead)");
  t->add_option("--variant", tr.variant, "step1 or step2")->capture_default_str();
  t->add_option("--out", tr.out, "Output checkpoint (.meaf)")->required();
  t->add_option("--log", tr.log, "Metrics log (NDJSON); stdout when omitted");
  t->add_option("--steps", tr.steps, "Optimizer steps")->capture_default_str();
  t->add_option("--batch", tr.batch, "Batch size")->capture_default_str();
  t->add_option("--lr", tr.lr, "Initial learning rate")->capture_default_str();
  t->add_option("--seed", tr.seed, "Random seed")->capture_default_str();
  t->add_option("--size", tr.size, "Network input side")->capture_default_str();
  t->add_option("--channels", tr.channels, "Transformer width")->capture_default_str();
  t->add_option("--log-every", tr.log_every, "Steps between loss records")->capture_default_str();
  t->add_option("--val-every", tr.val_every, "Steps between validation records (0: end only)")->capture_default_str();
  t->add_flag("--no-consistency", tr.no_consistency, "Drop both consistency losses");
  t->add_flag("--no-augment", tr.no_augment, "Disable augmentation");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate checkpoints on a dataset");
  e->add_option("--data", ev.data, "Dataset (.mead)")->required();
  e->add_option("--step1", ev.step1, "Step-1 checkpoint");
  e->add_option("--step2", ev.step2, "Step-2 checkpoint");
  e->add_option("--seed", ev.seed, "Click seed")->capture_default_str();
  e->add_option("--threads", ev.threads, "Worker threads (0: all cores)")->capture_default_str();
  e->add_option("--rows", ev.rows, "Write machine-readable rows (NDJSON) here");
  e->add_option("--mode", ev.mode, "two-step or step2-on-truth")->capture_default_str();

  MeasureArgs me;
  auto* m = app.add_subcommand("measure", "Measure one lesion from a click");
  m->add_option("--image", me.image, "Dataset case, file.mead#index")->required();
  m->add_option("--click", me.click, "Click as x,y (column,row)")->required();
  m->add_option("--step1", me.step1, "Step-1 checkpoint");
  m->add_option("--step2", me.step2, "Step-2 checkpoint");
  m->add_option("--spacing", me.spacing, "Pixel spacing in mm (default: from the dataset)");

  ServeArgs sv;
  auto* s = app.add_subcommand("serve", "Run the HTTP measurement service");
  s->add_option("--step1", sv.step1, "Step-1 checkpoint");
  s->add_option("--step2", sv.step2, "Step-2 checkpoint");
  s->add_option("--host", sv.host, "Bind address")->capture_default_str();
  s->add_option("--port", sv.port, "Port")->capture_default_str();
  s->add_option("--demo", sv.demos, "Demo dataset(s) served under /demo");
  s->add_option("--static", sv.static_dir, "Directory served at /");

  double baseline = 0.0, followup = 0.0;
  auto* a = app.add_subcommand("assess", "RECIST 1.1 response class for a lesion pair");
  a->add_option("--baseline", baseline, "Baseline long diameter (mm)")->required();
  a->add_option("--followup", followup, "Follow-up long diameter (mm); 0 if the lesion is gone")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForAllHelp& err) {
    return app.exit(err);
  } catch (const CLI::CallForVersion& err) {
    return app.exit(err);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kUsage;
  }

  try {
    if (g->parsed()) return run_generate(gen);
    if (t->parsed()) return run_train(tr);
    if (e->parsed()) return run_eval(ev);
    if (m->parsed()) return run_measure(me);
    if (s->parsed()) return run_serve(sv);
    if (a->parsed()) return run_assess(baseline, followup);
  } catch (const pipeline::TrainingDiverged& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDiverged;
  } catch (const UsageError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const std::invalid_argument& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kUsage;
  } catch (const data::DataError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDataError;
  } catch (const data::DatasetError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDataError;
  } catch (const model::CheckpointError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDataError;
  } catch (const pipeline::MeasurementError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kDataError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kFailure;
  }
  return kUsage;
}
