// liplab: command-line entry point.
//
// Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical failure.

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "liplab/config.hpp"
#include "liplab/error.hpp"
#include "liplab/imagio.hpp"
#include "liplab/maskgen.hpp"
#include "liplab/metrics.hpp"
#include "liplab/segnet.hpp"
#include "liplab/synth.hpp"
#include "liplab/texture.hpp"

namespace fs = std::filesystem;
using namespace liplab;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kNumerical = 3 };

std::mutex log_mutex;

/// One line per event on stderr: `liplab <event> key=value ...`.
void log_event(const std::string& event, const std::vector<std::pair<std::string, std::string>>& fields = {}) {
  std::lock_guard lock(log_mutex);
  std::cerr << "liplab " << event;
  for (const auto& [k, v] : fields) {
    const bool quote = v.find_first_of(" \t") != std::string::npos;
    std::cerr << ' ' << k << '=' << (quote ? "\"" + v + "\"" : v);
  }
  std::cerr << '\n';
}

std::string num(double v) { return liplab::detail::format_double(v); }

void write_run_config(const fs::path& dir, const KeyValueConfig& cfg) {
  fs::create_directories(dir);
  liplab::detail::write_file((dir / "run_config.txt").string(), cfg.to_text());
  log_event("config", {{"path", (dir / "run_config.txt").string()}});
}

texture::Sampling parse_sampling(const std::string& s) {
  if (s == "nearest") return texture::Sampling::nearest;
  if (s == "bilinear") return texture::Sampling::bilinear;
  throw UsageError("sampling must be nearest or bilinear, got '" + s + "'");
}

/// Runs fn(i) for i in [0, n) over `threads` workers; the first exception is rethrown.
template <class Fn>
void parallel_for(std::size_t n, int threads, Fn fn) {
  const int workers = std::max(1, std::min<int>(threads, static_cast<int>(n)));
  if (workers == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------------------------

struct TextureArgs {
  std::string image, out, lbp_pgm, glbp_pgm, sampling = "bilinear";
  int neighbors = 8;
  double radius = 1.0;
};

int run_texture(const TextureArgs& a) {
  texture::LbpParams p{a.neighbors, a.radius, parse_sampling(a.sampling)};
  p.validate();
  const ByteImage rgb = read_ppm(a.image);
  const FloatImage planes = texture::build_input(rgb, p);
  FloatTensor t;
  t.dims = {std::uint32_t(planes.height), std::uint32_t(planes.width), std::uint32_t(planes.channels)};
  t.data = planes.data;
  write_tensor(a.out, t);
  if (!a.lbp_pgm.empty()) write_pgm(a.lbp_pgm, texture::plane_to_bytes(planes, 3));
  if (!a.glbp_pgm.empty()) write_pgm(a.glbp_pgm, texture::plane_to_bytes(planes, 4));
  log_event("texture", {{"image", a.image}, {"out", a.out}, {"neighbors", std::to_string(p.neighbors)},
                        {"radius", num(p.radius)}, {"sampling", a.sampling}});
  return kOk;
}

struct MaskgenArgs {
  std::string landmarks, tmpl, size, out, contour_out;
  double spacing = 2.0;
};

int run_maskgen(const MaskgenArgs& a) {
  const auto [h, w] = parse_size(a.size);
  const LandmarkSet lm = read_landmarks(a.landmarks);
  const maskgen::TemplateContour tmpl = maskgen::read_template(a.tmpl);
  const maskgen::DensifiedContour contour = maskgen::generate_contour(lm, tmpl, a.spacing);
  const maskgen::RasterResult r = maskgen::rasterize(contour, h, w);
  for (const auto& warning : r.warnings) log_event("warning", {{"message", warning}});
  write_mask(a.out, r.mask);
  if (!a.contour_out.empty()) {
    LandmarkSet pts;
    std::size_t k = 0;
    for (const auto& p : contour.points) {
      pts.push_back(p.anatomical ? lm.names[p.segment] : "a" + std::to_string(k++), p.point);
    }
    write_landmarks(a.contour_out, pts);
  }
  log_event("maskgen", {{"out", a.out}, {"contour_points", std::to_string(contour.points.size())},
                        {"foreground", std::to_string(r.mask.count())}});
  return kOk;
}

struct SynthArgs {
  int n = 32;
  std::string out_dir, size = "64x64";
  std::uint64_t seed = 1;
  std::vector<std::string> augment;
};

int run_synth(const SynthArgs& a) {
  const auto [h, w] = parse_size(a.size);
  std::vector<synth::AugmentOp> ops;
  for (const auto& t : a.augment) ops.push_back(synth::parse_op(t));
  if (a.n < 1) throw UsageError("--n must be >= 1");
  KeyValueConfig cfg;
  cfg.set("command", "synth");
  cfg.set("n", std::to_string(a.n));
  cfg.set("seed", std::to_string(a.seed));
  cfg.set("size", std::to_string(h) + "x" + std::to_string(w));
  std::string aug;
  for (const auto& t : a.augment) aug += (aug.empty() ? "" : ",") + t;
  cfg.set("augment", aug);
  write_run_config(a.out_dir, cfg);
  for (int i = 0; i < a.n; ++i) {
    synth::Sample s = synth::generate(synth::random_params(a.seed + i, h, w), h, w);
    if (!ops.empty()) s = synth::augment(s, ops);
    synth::write_sample(a.out_dir, i, s);
  }
  log_event("synth", {{"out_dir", a.out_dir}, {"n", std::to_string(a.n)}, {"seed", std::to_string(a.seed)}});
  return kOk;
}

// ---------------------------------------------------------------------------------------------

const std::set<std::string> kTrainKeys{"input_size", "widths", "epochs",   "lr",          "batch",
                                       "seed",       "threshold", "lambda_bce", "stop_dice", "input_mode",
                                       "lbp_neighbors", "lbp_radius", "lbp_sampling", "augment", "data_dir", "out_dir"};

struct TrainArgs {
  std::string config, data_dir, out_dir;
};

int run_train(const TrainArgs& a) {
  KeyValueConfig cfg = KeyValueConfig::load(a.config);
  cfg.require_known(kTrainKeys);
  if (!a.data_dir.empty()) cfg.set("data_dir", a.data_dir);
  if (!a.out_dir.empty()) cfg.set("out_dir", a.out_dir);
  if (!cfg.has("data_dir") || !cfg.has("out_dir")) throw UsageError("data_dir and out_dir are required");

  const auto [h, w] = parse_size(cfg.get_string("input_size", "64x64"));
  const auto widths = cfg.get_int_list("widths", {8, 16, 32, 64});
  if (widths.size() != 4) throw UsageError("widths must list 4 values");
  const std::string mode = cfg.get_string("input_mode", "texture");
  if (mode != "texture" && mode != "rgb") throw UsageError("input_mode must be texture or rgb");
  segnet::PipelineSpec spec = segnet::make_pipeline_spec(mode == "texture" ? 5 : 3,
                                                         {widths[0], widths[1], widths[2], widths[3]}, h, w,
                                                         cfg.get_double("threshold", 0.5));
  spec.lbp = {static_cast<int>(cfg.get_int("lbp_neighbors", 8)), cfg.get_double("lbp_radius", 1.0),
              parse_sampling(cfg.get_string("lbp_sampling", "bilinear"))};
  spec.lbp.validate();

  segnet::TrainConfig tc;
  tc.epochs = static_cast<int>(cfg.get_int("epochs", 100));
  tc.lr = cfg.get_double("lr", 1e-3);
  tc.batch = static_cast<int>(cfg.get_int("batch", 4));
  tc.seed = static_cast<std::uint64_t>(cfg.get_int("seed", 1));
  tc.lambda_bce = cfg.get_double("lambda_bce", 0.5);
  tc.threshold = spec.threshold;
  tc.stop_dice = cfg.get_double("stop_dice", 0.0);
  const std::string augment = cfg.get_string("augment", "");
  std::vector<std::string> aug_ops;
  if (!augment.empty()) aug_ops = liplab::detail::split_csv(augment);
  for (const auto& t : aug_ops) synth::parse_op(t);  // reject bad tokens before any output is written

  KeyValueConfig resolved;
  resolved.set("input_size", std::to_string(h) + "x" + std::to_string(w));
  resolved.set("widths", std::to_string(widths[0]) + "," + std::to_string(widths[1]) + "," +
                             std::to_string(widths[2]) + "," + std::to_string(widths[3]));
  resolved.set("epochs", std::to_string(tc.epochs));
  resolved.set("lr", num(tc.lr));
  resolved.set("batch", std::to_string(tc.batch));
  resolved.set("seed", std::to_string(tc.seed));
  resolved.set("threshold", num(spec.threshold));
  resolved.set("lambda_bce", num(tc.lambda_bce));
  resolved.set("stop_dice", num(tc.stop_dice));
  resolved.set("input_mode", mode);
  resolved.set("lbp_neighbors", std::to_string(spec.lbp.neighbors));
  resolved.set("lbp_radius", num(spec.lbp.radius));
  resolved.set("lbp_sampling", spec.lbp.sampling == texture::Sampling::nearest ? "nearest" : "bilinear");
  resolved.set("augment", augment);
  resolved.set("data_dir", cfg.raw("data_dir"));
  resolved.set("out_dir", cfg.raw("out_dir"));
  const fs::path out(cfg.raw("out_dir"));
  write_run_config(out, resolved);

  std::vector<synth::Sample> samples;
  for (auto& [name, pair] : synth::read_labeled_dir(cfg.raw("data_dir"))) {
    samples.push_back({std::move(pair.first), {}, std::move(pair.second)});
  }
  std::vector<segnet::LabeledImage> data;
  for (auto& smp : synth::with_augmentations(samples, aug_ops)) data.push_back({std::move(smp.rgb), std::move(smp.mask)});
  log_event("train_start", {{"images", std::to_string(samples.size())}, {"samples", std::to_string(data.size())},
                            {"seed", std::to_string(tc.seed)}});

  segnet::Pipeline pipe = segnet::build_pipeline(spec, tc.seed);
  std::string curve = "stage,epoch,loss,smoothed_loss,dice\n";
  const auto result = segnet::train_pipeline(pipe, data, tc, [&](const segnet::EpochLog& e) {
    curve += std::to_string(e.stage) + "," + std::to_string(e.epoch) + "," + num(e.loss) + "," +
             num(e.smoothed_loss) + "," + num(e.dice) + "\n";
    log_event("epoch", {{"stage", std::to_string(e.stage)}, {"epoch", std::to_string(e.epoch)},
                        {"loss", num(e.loss)}, {"dice", num(e.dice)}});
  });
  liplab::detail::write_file((out / "train_log.csv").string(), curve);
  segnet::save_pipeline(out.string(), pipe);
  if (result.stage2_train_dice < result.stage1_train_dice - 0.01) {
    log_event("warning", {{"message", "stage 2 lowered training Dice by more than 0.01"}});
  }
  log_event("train_done", {{"stage1_train_dice", num(result.stage1_train_dice)},
                           {"stage2_train_dice", num(result.stage2_train_dice)},
                           {"model", out.string()}});
  return kOk;
}

struct InferArgs {
  std::string model, image, out, prob_out, in_dir, out_dir;
};

void write_prob(const std::string& path, const nn::Tensor<float>& prob) {
  FloatTensor t;
  t.dims = {std::uint32_t(prob.shape.h), std::uint32_t(prob.shape.w), 1};
  t.data = prob.data;
  write_tensor(path, t);
}

int run_infer(const InferArgs& a, int threads) {
  const bool single = !a.image.empty();
  if (single == !a.in_dir.empty()) throw UsageError("give exactly one of --image or --in-dir");
  if (single && a.out.empty()) throw UsageError("--image needs --out");
  if (!single && a.out_dir.empty()) throw UsageError("--in-dir needs --out-dir");
  segnet::Pipeline pipe = segnet::load_pipeline(a.model);
  if (single) {
    const auto r = segnet::infer(pipe, read_ppm(a.image));
    write_mask(a.out, r.mask);
    if (!a.prob_out.empty()) write_prob(a.prob_out, r.prob);
    log_event("infer", {{"image", a.image}, {"out", a.out}, {"foreground", std::to_string(r.mask.count())}});
    return kOk;
  }
  std::vector<fs::path> images;
  for (const auto& e : fs::directory_iterator(a.in_dir)) {
    if (e.path().extension() == ".ppm") images.push_back(e.path());
  }
  std::sort(images.begin(), images.end());
  if (images.empty()) throw DataError("no .ppm images in '" + a.in_dir + "'");
  KeyValueConfig cfg;
  cfg.set("command", "infer");
  cfg.set("model", a.model);
  cfg.set("in_dir", a.in_dir);
  cfg.set("threshold", num(pipe.spec.threshold));
  cfg.set("seed", std::to_string(pipe.stage1.seed()));
  write_run_config(a.out_dir, cfg);
  parallel_for(images.size(), threads, [&](std::size_t i) {
    const auto r = segnet::infer(pipe, read_ppm(images[i].string()));
    const fs::path base = fs::path(a.out_dir) / images[i].stem();
    write_mask(base.string() + ".mask.pgm", r.mask);
    write_prob(base.string() + ".prob.tensor", r.prob);
  });
  log_event("infer", {{"in_dir", a.in_dir}, {"out_dir", a.out_dir}, {"images", std::to_string(images.size())}});
  return kOk;
}

struct EvalArgs {
  std::string gt_dir, pred_dir, out;
};

std::string mask_stem(const fs::path& p) {
  std::string name = p.filename().string();
  for (const std::string suffix : {".mask.pgm", ".pgm"}) {
    if (name.ends_with(suffix)) return name.substr(0, name.size() - suffix.size());
  }
  return name;
}

int run_eval(const EvalArgs& a, int threads) {
  std::vector<fs::path> gts;
  for (const auto& e : fs::directory_iterator(a.gt_dir)) {
    if (e.path().extension() == ".pgm") gts.push_back(e.path());
  }
  std::sort(gts.begin(), gts.end());
  if (gts.empty()) throw DataError("no .pgm masks in '" + a.gt_dir + "'");
  std::vector<metrics::MaskPair> pairs(gts.size());
  parallel_for(gts.size(), threads, [&](std::size_t i) {
    const fs::path pred = fs::path(a.pred_dir) / gts[i].filename();
    if (!fs::exists(pred)) throw DataError("no prediction for '" + gts[i].string() + "' (expected " + pred.string() + ")");
    BinaryMask gt = read_mask(gts[i].string()), pm = read_mask(pred.string());
    if (gt.height != pm.height || gt.width != pm.width) {
      throw ShapeError("mask size mismatch: " + gts[i].string() + " is " + std::to_string(gt.height) + "x" +
                       std::to_string(gt.width) + ", " + pred.string() + " is " + std::to_string(pm.height) + "x" +
                       std::to_string(pm.width));
    }
    pairs[i] = {mask_stem(gts[i]), std::move(gt), std::move(pm)};
  });
  const metrics::MetricsReport report = metrics::evaluate_report(pairs);
  liplab::detail::write_file(a.out, report.to_csv());
  for (const auto& [name, s] : report.aggregates) {
    log_event("summary", {{"metric", name}, {"mean", num(s.mean)}, {"median", num(s.median)}, {"iqr", num(s.iqr)},
                          {"n", std::to_string(s.count)}});
  }
  log_event("eval", {{"pairs", std::to_string(pairs.size())}, {"out", a.out}});
  return kOk;
}

struct GradcheckArgs {
  std::string spec = "toy";
  std::uint64_t seed = 1;
  std::size_t entries = 16;
  double eps = 1e-4;
};

int run_gradcheck(const GradcheckArgs& a) {
  segnet::AUNetSpec spec;
  if (a.spec == "toy") {
    spec = segnet::toy_spec();
  } else {
    throw UsageError("unknown gradcheck spec '" + a.spec + "' (available: toy)");
  }
  nn::GradCheckOptions opt = segnet::network_check_options(a.entries);
  opt.eps = a.eps;
  const nn::GradCheckReport report = segnet::grad_check_network(spec, a.seed, opt);
  std::cout << report.to_text();
  log_event("gradcheck", {{"spec", a.spec}, {"seed", std::to_string(a.seed)}, {"worst", num(report.worst())},
                          {"passed", report.passed() ? "true" : "false"}});
  return report.passed() ? kOk : kNumerical;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"liplab: lip segmentation toolkit"};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "Worker threads for per-image work (1 = fully deterministic order)")
      ->check(CLI::PositiveNumber);

  TextureArgs tex;
  auto* c_tex = app.add_subcommand("texture", "Build the 5-plane (RGB, LBP, GLBP) input tensor for an image");
  c_tex->add_option("--image", tex.image, "Input PPM")->required();
  c_tex->add_option("--out", tex.out, "Output tensor file (H,W,5)")->required();
  c_tex->add_option("--lbp-pgm", tex.lbp_pgm, "Optional PGM of the LBP plane");
  c_tex->add_option("--glbp-pgm", tex.glbp_pgm, "Optional PGM of the GLBP plane");
  c_tex->add_option("--neighbors", tex.neighbors, "Sampling points P")->capture_default_str();
  c_tex->add_option("--radius", tex.radius, "Sampling radius R")->capture_default_str();
  c_tex->add_option("--sampling", tex.sampling, "nearest or bilinear")->capture_default_str();

  MaskgenArgs mg;
  auto* c_mg = app.add_subcommand("maskgen", "Densify landmarks through a template and rasterize a mask");
  c_mg->add_option("--landmarks", mg.landmarks, "Landmark CSV (name,x,y)")->required();
  c_mg->add_option("--template", mg.tmpl, "Template CSV (name,x,y,anchor)")->required();
  c_mg->add_option("--size", mg.size, "Mask size HxW")->required();
  c_mg->add_option("--out", mg.out, "Output PGM mask")->required();
  c_mg->add_option("--spacing", mg.spacing, "Template discretization step in pixels")->capture_default_str();
  c_mg->add_option("--contour-out", mg.contour_out, "Optional CSV of the densified contour");

  SynthArgs sy;
  auto* c_sy = app.add_subcommand("synth", "Generate synthetic images, landmarks and masks");
  c_sy->add_option("--n", sy.n, "Number of samples")->capture_default_str();
  c_sy->add_option("--out-dir", sy.out_dir, "Output directory")->required();
  c_sy->add_option("--seed", sy.seed, "Seed of the first sample")->capture_default_str();
  c_sy->add_option("--size", sy.size, "Canvas size HxW")->capture_default_str();
  c_sy->add_option("--augment", sy.augment,
                   "Augmentations applied in order: hflip, rotate:5, rotate:-5, brightness:0.8, brightness:1.1");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the two-stage pipeline from a key = value config");
  c_tr->add_option("--config", tr.config, "Run config file")->required();
  c_tr->add_option("--data-dir", tr.data_dir, "Overrides data_dir");
  c_tr->add_option("--out-dir", tr.out_dir, "Overrides out_dir");

  InferArgs in;
  auto* c_in = app.add_subcommand("infer", "Segment one image or a directory of images");
  c_in->add_option("--model", in.model, "Directory written by train")->required();
  c_in->add_option("--image", in.image, "Input PPM");
  c_in->add_option("--out", in.out, "Output PGM mask for --image");
  c_in->add_option("--prob-out", in.prob_out, "Optional probability tensor for --image");
  c_in->add_option("--in-dir", in.in_dir, "Directory of PPM images");
  c_in->add_option("--out-dir", in.out_dir, "Output directory for --in-dir");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Compare predicted masks with ground truth");
  c_ev->add_option("--gt-dir", ev.gt_dir, "Ground-truth PGM masks")->required();
  c_ev->add_option("--pred-dir", ev.pred_dir, "Predicted PGM masks with the same file names")->required();
  c_ev->add_option("--out", ev.out, "Per-image metrics CSV")->required();

  GradcheckArgs gc;
  auto* c_gc = app.add_subcommand("gradcheck", "Finite-difference check of the network gradients");
  c_gc->add_option("--spec", gc.spec, "Network spec (toy)")->capture_default_str();
  c_gc->add_option("--seed", gc.seed, "Seed for weights and data")->capture_default_str();
  c_gc->add_option("--entries", gc.entries, "Entries sampled per parameter tensor (0 = all)")->capture_default_str();
  c_gc->add_option("--eps", gc.eps, "Central-difference step")->capture_default_str()->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kUsage;
  }

  try {
    if (*c_tex) return run_texture(tex);
    if (*c_mg) return run_maskgen(mg);
    if (*c_sy) return run_synth(sy);
    if (*c_tr) return run_train(tr);
    if (*c_in) return run_infer(in, threads);
    if (*c_ev) return run_eval(ev, threads);
    if (*c_gc) return run_gradcheck(gc);
  } catch (const UsageError& e) {
    log_event("error", {{"kind", "usage"}, {"message", e.what()}});
    return kUsage;
  } catch (const NumericalError& e) {
    log_event("error", {{"kind", "numerical"}, {"message", e.what()}});
    return kNumerical;
  } catch (const Error& e) {
    log_event("error", {{"kind", "data"}, {"message", e.what()}});
    return kData;
  } catch (const fs::filesystem_error& e) {
    log_event("error", {{"kind", "data"}, {"message", e.what()}});
    return kData;
  }
  return kUsage;
}
