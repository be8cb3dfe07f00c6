#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "eformer/ablation.hpp"
#include "eformer/checkpoint.hpp"
#include "eformer/config.hpp"
#include "eformer/data.hpp"
#include "eformer/gradcheck_suite.hpp"
#include "eformer/metrics.hpp"
#include "eformer/model.hpp"
#include "eformer/train.hpp"
#include "eformer/visualize.hpp"

namespace eformer::cli {

namespace fs = std::filesystem;

namespace {

// Errors that map to exit code 2.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::size_t reflect_index(long i, std::size_t n) {
  if (n == 1) return 0;
  const long period = 2 * (static_cast<long>(n) - 1);
  long m = i % period;
  if (m < 0) m += period;
  return static_cast<std::size_t>(m < static_cast<long>(n) ? m : period - m);
}

struct CommonFlags {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::optional<std::size_t> res;
  std::optional<std::string> ablation;
  std::optional<int> hr_level;
  std::optional<int> lr_level;
  std::optional<std::size_t> synthetic;
  std::optional<std::string> manifest;
  std::optional<std::string> preset;
  std::vector<std::string> sets;
};

void add_common(CLI::App* cmd, CommonFlags& f, const std::string& default_out) {
  f.out_dir = default_out;
  cmd->add_option("--config", f.config_path, "Layered key=value config file");
  cmd->add_option("--seed", f.seed, "Seed for initialization and data order");
  cmd->add_option("--out-dir", f.out_dir, "Output directory")->capture_default_str();
  cmd->add_option("--res", f.res, "Square resolution (multiple of 16)");
  cmd->add_option("--ablation", f.ablation, "full | ca_only | sa_only");
  cmd->add_option("--hr-level", f.hr_level, "High-resolution pyramid level (4 | 8)");
  cmd->add_option("--lr-level", f.lr_level, "Low-resolution pyramid level (8 | 16)");
  cmd->add_option("--synthetic", f.synthetic, "Use N synthetic samples instead of a manifest");
  cmd->add_option("--manifest", f.manifest, "Dataset manifest file");
  cmd->add_option("--preset", f.preset, "desk | paper model preset");
  cmd->add_option("--set", f.sets, "Override any config key: --set section.key=value");
}

KeyValues preset_layer(const std::string& name) {
  if (name == "desk") return ModelConfig::desk().to_kv();
  if (name == "paper") {
    ModelConfig m;
    m.res_h = m.res_w = 224;
    return m.to_kv();
  }
  throw UsageError("unknown preset '" + name + "' (expected desk or paper)");
}

struct Resolved {
  config::RunConfig run;
  KeyValues explicit_keys;  // everything set by the config file or flags
};

Resolved resolve(const CommonFlags& f, const KeyValues& extra = {}) {
  std::vector<KeyValues> layers;
  if (f.preset) layers.push_back(preset_layer(*f.preset));
  KeyValues file;
  if (!f.config_path.empty()) file = config::load(f.config_path);
  KeyValues flags = extra;
  if (f.seed) flags["train.seed"] = std::to_string(*f.seed);
  if (f.res) flags["model.res_h"] = flags["model.res_w"] = std::to_string(*f.res);
  if (f.ablation) flags["model.ablation"] = *f.ablation;
  if (f.hr_level) flags["model.hr_level"] = std::to_string(*f.hr_level);
  if (f.lr_level) flags["model.lr_level"] = std::to_string(*f.lr_level);
  if (f.manifest) flags["data.manifest"] = *f.manifest;
  if (f.synthetic) {
    flags["data.synthetic"] = std::to_string(*f.synthetic);
    flags["data.manifest"] = "";
  }
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
    flags[s.substr(0, eq)] = s.substr(eq + 1);
  }
  layers.push_back(file);
  layers.push_back(flags);
  Resolved r{config::RunConfig::resolve(layers), config::merge({file, flags})};
  return r;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

struct DataSets {
  data::SourceSet train;
  std::vector<data::Sample> eval;
  bool has_eval = false;
};

data::SourceSet load_split(const config::RunConfig& rc, data::Split split) {
  if (rc.data.manifest.empty()) {
    if (rc.data.synthetic == 0) throw UsageError("synthetic mode needs --synthetic N with N >= 1");
    return data::synth_dataset(rc.data.synthetic, rc.model.res_h, rc.data.synth_seed);
  }
  if (!fs::exists(rc.data.manifest)) throw UsageError("manifest not found: " + rc.data.manifest);
  try {
    return data::load_sources(data::DatasetManifest::load(rc.data.manifest), split);
  } catch (const data::ManifestError& e) {
    throw UsageError(e.what());
  }
}

DataSets load_training_data(const config::RunConfig& rc) {
  DataSets d;
  d.train = load_split(rc, data::Split::Train);
  const std::size_t h = rc.model.res_h, w = rc.model.res_w;
  if (rc.data.manifest.empty()) {
    if (rc.data.eval_synthetic > 0) {
      d.eval = data::compose_all(data::synth_dataset(rc.data.eval_synthetic, h, rc.data.synth_seed + 1), h, w,
                                 rc.train.seed);
    } else {
      d.eval = data::compose_all(d.train, h, w, rc.train.seed);
    }
    d.has_eval = true;
  } else {
    try {
      d.eval = data::compose_all(load_split(rc, data::Split::Val), h, w, rc.train.seed);
      d.has_eval = true;
    } catch (const UsageError&) {
      d.has_eval = false;
    }
  }
  return d;
}

// Checkpoint model config with any explicitly requested model.* keys laid
// over it, so a conflicting request surfaces as an architecture mismatch.
ModelConfig checkpoint_model_config(const train::Checkpoint& ck, const KeyValues& explicit_keys) {
  KeyValues kv = ck.model.to_kv();
  for (const auto& [k, v] : explicit_keys) {
    if (k.rfind("model.", 0) == 0) kv[k] = v;
  }
  return ModelConfig::from_kv(kv);
}

EFormer model_from_checkpoint(const std::string& path, const KeyValues& explicit_keys) {
  const train::Checkpoint ck = train::Checkpoint::load(path);
  ParamStore store;
  for (const auto& [name, t] : ck.params) store.add(name, t);
  return EFormer(checkpoint_model_config(ck, explicit_keys), std::move(store));
}

Tensor predict_matte(const EFormer& model, const Tensor& rgb) {
  NoGradGuard guard;
  const std::size_t h = rgb.shape()[1], w = rgb.shape()[2];
  const Tensor padded = pad_to_multiple(rgb, 16);
  const Tensor batch = reshape(padded, {1, 3, padded.shape()[1], padded.shape()[2]});
  const Tensor matte = model.forward(batch).matte;
  return crop(reshape(matte, {1, padded.shape()[1], padded.shape()[2]}), h, w);
}

std::vector<fs::path> collect_pngs(const std::vector<std::string>& inputs) {
  std::vector<fs::path> files;
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      std::vector<fs::path> found;
      for (const auto& entry : fs::directory_iterator(in)) {
        if (entry.path().extension() == ".png") found.push_back(entry.path());
      }
      std::sort(found.begin(), found.end());
      files.insert(files.end(), found.begin(), found.end());
    } else {
      files.emplace_back(in);
    }
  }
  return files;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const CommonFlags& f, std::optional<std::size_t> epochs, std::optional<std::size_t> batch,
              std::optional<double> lr, std::optional<std::size_t> max_steps, const std::string& resume,
              std::ostream& out) {
  KeyValues extra;
  if (epochs) extra["train.epochs"] = std::to_string(*epochs);
  if (batch) extra["train.batch"] = std::to_string(*batch);
  if (lr) extra["train.lr0"] = config::format_double(*lr);
  Resolved r = resolve(f, extra);

  std::optional<EFormer> model;
  train::TrainState state;
  train::TrainConfig tc = r.run.train;
  if (!resume.empty()) {
    const train::Checkpoint ck = train::Checkpoint::load(resume);
    model.emplace(train::restore_model(ck));
    state = ck.state;
    tc = ck.train;
    if (epochs) tc.epochs = *epochs;
    r.run.model = ck.model;
    r.run.train = tc;
  } else {
    model.emplace(r.run.model, tc.seed);
  }

  DataSets d = load_training_data(r.run);
  const fs::path dir = f.out_dir;
  write_text(dir / "resolved.cfg", r.run.to_text());
  out << "resolved config:\n" << r.run.to_text() << "\n";
  out << "training on " << d.train.size() << " foregrounds at " << r.run.model.res_h << "x" << r.run.model.res_w
      << (resume.empty() ? "" : " (resumed at epoch " + std::to_string(state.epoch) + ")") << "\n";

  train::FitOptions fo;
  fo.out_dir = dir;
  fo.log = &out;
  fo.max_steps = max_steps.value_or(0);
  fo.height = r.run.model.res_h;
  fo.width = r.run.model.res_w;
  const train::FitResult res = train::fit(*model, state, tc, d.train, d.has_eval ? &d.eval : nullptr, fo);
  for (const auto& p : res.checkpoints) out << "wrote " << p.string() << "\n";
  return kExitOk;
}

int cmd_eval(const CommonFlags& f, const std::string& checkpoint, const std::string& pred_dir,
             const std::string& gt_dir, const std::string& split, const std::string& save_preds, std::ostream& out) {
  metrics::MetricsReport report;
  if (!pred_dir.empty() || !gt_dir.empty()) {
    if (pred_dir.empty() || gt_dir.empty()) throw UsageError("--pred-dir and --gt-dir go together");
    std::vector<Tensor> preds, gts;
    for (const auto& p : collect_pngs({pred_dir})) {
      const fs::path g = fs::path(gt_dir) / p.filename();
      if (!fs::exists(g)) throw UsageError("no ground truth for " + p.filename().string());
      preds.push_back(data::read_png_gray(p));
      gts.push_back(data::read_png_gray(g));
    }
    if (preds.empty()) throw UsageError("no PNG predictions in " + pred_dir);
    report = metrics::evaluate(preds, gts);
  } else {
    if (checkpoint.empty()) throw UsageError("eval needs --checkpoint or --pred-dir/--gt-dir");
    const Resolved r = resolve(f);
    const EFormer model = model_from_checkpoint(checkpoint, r.explicit_keys);
    config::RunConfig rc = r.run;
    rc.model = model.config();
    const data::SourceSet src = load_split(rc, data::parse_split(split));
    const auto samples = data::compose_all(src, rc.model.res_h, rc.model.res_w, rc.train.seed);
    std::vector<Tensor> preds, gts;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      preds.push_back(predict_matte(model, samples[i].image));
      gts.push_back(samples[i].alpha_gt);
      if (!save_preds.empty()) {
        const std::string name = samples[i].meta.fg_id + ".png";
        data::write_png(fs::path(save_preds) / "pred" / name, preds.back());
        data::write_png(fs::path(save_preds) / "gt" / name, gts.back());
      }
    }
    report = metrics::evaluate(preds, gts);
  }
  out << metrics::MetricsReport::header() << "\n" << report.row() << "\n";
  write_text(fs::path(f.out_dir) / "metrics.txt", report.to_text());
  write_text(fs::path(f.out_dir) / "metrics.json", report.to_json() + "\n");
  return kExitOk;
}

int cmd_infer(const CommonFlags& f, const std::string& checkpoint, const std::vector<std::string>& inputs,
              std::ostream& out, std::ostream& err) {
  if (checkpoint.empty()) throw UsageError("infer needs --checkpoint");
  if (inputs.empty()) throw UsageError("infer needs at least one --input");
  const Resolved r = resolve(f);
  const EFormer model = model_from_checkpoint(checkpoint, r.explicit_keys);
  int failures = 0;
  for (const auto& path : collect_pngs(inputs)) {
    try {
      const Tensor rgb = data::read_png_rgb(path);
      const Tensor matte = predict_matte(model, rgb);
      const fs::path dst = fs::path(f.out_dir) / (path.stem().string() + "_matte.png");
      data::write_png(dst, matte);
      out << path.string() << " -> " << dst.string() << "\n";
    } catch (const std::exception& e) {
      err << "error: " << path.string() << ": " << e.what() << "\n";
      ++failures;
    }
  }
  return failures ? kExitFailure : kExitOk;
}

int cmd_gradcheck(const CommonFlags& f, const std::string& inject, const std::string& filter, bool ops_only,
                  bool block_only, bool list, std::ostream& out) {
  diag::SuiteOptions opt;
  opt.seed = f.seed.value_or(0);
  opt.ops = !block_only;
  opt.block = !ops_only;
  if (!inject.empty()) opt.inject_bug = inject;
  if (!filter.empty()) opt.filter = filter;
  if (list) {
    for (const auto& e : diag::op_entries(opt.seed)) out << e.name << "\n";
    for (const auto& e : diag::block_entries(opt.seed)) out << e.name << "\n";
    return kExitOk;
  }
  std::vector<diag::GradCheckResult> results;
  try {
    results = diag::run_suite(opt);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  char buf[200];
  for (const auto& r : results) {
    std::snprintf(buf, sizeof buf, "%-24s max_rel=%.3e tol=%.0e  %s", r.name.c_str(), r.report.max_rel_error, r.tol,
                  r.report.passed ? "ok" : "FAIL");
    out << buf << "\n";
  }
  const bool ok = diag::all_passed(results);
  out << (ok ? "gradcheck: all " : "gradcheck: FAILED, ") << results.size() << " checks"
      << (ok ? " passed" : "") << "\n";
  return ok ? kExitOk : kExitFailure;
}

std::optional<viz::Box> parse_box(const std::string& s, std::size_t h, std::size_t w) {
  if (s.empty()) return viz::Box{h / 4, w / 4, h - h / 4, w - w / 4};
  std::vector<std::size_t> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(config::parse_size("--box", item));
  if (v.size() != 4) throw UsageError("--box expects y0,x0,y1,x1");
  return viz::Box{v[0], v[1], v[2], v[3]};
}

int cmd_visualize(const CommonFlags& f, const std::string& checkpoint, const std::string& image_path,
                  const std::string& taps_arg, std::size_t block, bool gradcam, const std::string& box_arg,
                  std::ostream& out, std::ostream& err) {
  std::vector<viz::Tap> taps;
  try {
    taps = viz::parse_taps(taps_arg);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const Resolved r = resolve(f);
  std::optional<EFormer> model;
  if (!checkpoint.empty()) {
    model.emplace(model_from_checkpoint(checkpoint, r.explicit_keys));
  } else {
    model.emplace(r.run.model, r.run.train.seed);
  }
  if (block >= model->config().decoder.blocks) {
    throw UsageError("--block " + std::to_string(block) + " exceeds the model's " +
                     std::to_string(model->config().decoder.blocks) + " blocks");
  }

  Tensor rgb;
  if (!image_path.empty()) {
    rgb = data::read_png_rgb(image_path);
  } else {
    const std::size_t res = model->config().res_h;
    const auto src = data::synth_dataset(1, res, r.run.data.synth_seed);
    rgb = data::compose_all(src, res, model->config().res_w, 0).front().image;
  }
  const std::size_t h = rgb.shape()[1], w = rgb.shape()[2];
  const Tensor padded = pad_to_multiple(rgb, 16);
  const std::size_t ph = padded.shape()[1], pw = padded.shape()[2];
  std::optional<viz::Box> box;
  if (gradcam) box = parse_box(box_arg, h, w);

  const auto maps = viz::compute_heatmaps(*model, reshape(padded, {1, 3, ph, pw}), taps, block, box);
  model->params().zero_grad();

  const fs::path dir = f.out_dir;
  data::write_png(dir / "input.png", rgb);
  std::ostringstream index;
  for (const auto& m : maps) {
    const std::string stem = viz::tap_name(m.tap) + "_block" + std::to_string(m.block);
    if (!m.available) {
      err << "warning: tap " << viz::tap_name(m.tap) << " is not present in this model ("
          << decoder::ablation_name(model->config().decoder.ablation) << "); skipped\n";
      continue;
    }
    const Tensor heat = crop(m.heat, h, w);
    const Tensor ov = crop(m.overlay, h, w);
    data::write_png(dir / ("heatmap_" + stem + ".png"), heat);
    data::write_png(dir / ("overlay_" + stem + ".png"), ov);
    const auto [lo, hi] = std::minmax_element(heat.data().begin(), heat.data().end());
    index << stem << " min=" << config::format_double(*lo) << " max=" << config::format_double(*hi) << "\n";
    out << "wrote heatmap_" << stem << ".png and overlay_" << stem << ".png\n";
  }
  write_text(dir / "heatmaps.txt", index.str());
  return kExitOk;
}

int cmd_inspect(const CommonFlags& f, const std::string& checkpoint, std::ostream& out) {
  const Resolved r = resolve(f);
  if (!checkpoint.empty()) {
    const EFormer model = model_from_checkpoint(checkpoint, r.explicit_keys);
    out << model.summary();
    return kExitOk;
  }
  const EFormer model(r.run.model, r.run.train.seed);
  out << model.summary();
  out << "\nresolved config:\n" << r.run.to_text();
  return kExitOk;
}

int cmd_ablate(const CommonFlags& f, std::size_t steps, std::ostream& out) {
  const Resolved r = resolve(f);
  const DataSets d = load_training_data(r.run);
  train::AblationOptions opt;
  opt.steps = steps;
  opt.height = r.run.model.res_h;
  opt.width = r.run.model.res_w;
  opt.log = &out;
  const train::AblationTable table =
      train::run_ablation_matrix(r.run.model, r.run.train, d.train, d.has_eval ? d.eval : data::compose_all(d.train, opt.height, opt.width, r.run.train.seed), opt);
  const std::string text = table.to_text();
  out << text;
  write_text(fs::path(f.out_dir) / "ablation.txt", text);
  write_text(fs::path(f.out_dir) / "ablation.json", table.to_json() + "\n");
  write_text(fs::path(f.out_dir) / "resolved.cfg", r.run.to_text());
  return kExitOk;
}

}  // namespace

Tensor pad_to_multiple(const Tensor& img, std::size_t multiple) {
  if (img.dim() != 3) throw ShapeError("pad_to_multiple expects [C, H, W], got " + shape_str(img.shape()));
  const std::size_t c = img.shape()[0], h = img.shape()[1], w = img.shape()[2];
  const std::size_t ph = (h + multiple - 1) / multiple * multiple;
  const std::size_t pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return img;
  const auto d = img.data();
  std::vector<double> out(c * ph * pw);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < ph; ++y) {
      const std::size_t sy = reflect_index(static_cast<long>(y), h);
      for (std::size_t x = 0; x < pw; ++x) {
        out[(k * ph + y) * pw + x] = d[(k * h + sy) * w + reflect_index(static_cast<long>(x), w)];
      }
    }
  }
  return Tensor::from({c, ph, pw}, std::move(out));
}

Tensor crop(const Tensor& img, std::size_t h, std::size_t w) {
  if (img.dim() != 3 || img.shape()[1] < h || img.shape()[2] < w) {
    throw ShapeError("cannot crop " + shape_str(img.shape()) + " to " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (img.shape()[1] == h && img.shape()[2] == w) return img;
  const std::size_t c = img.shape()[0], ih = img.shape()[1], iw = img.shape()[2];
  const auto d = img.data();
  std::vector<double> out(c * h * w);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) out[(k * h + y) * w + x] = d[(k * ih + y) * iw + x];
    }
  }
  return Tensor::from({c, h, w}, std::move(out));
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EFormer portrait matting: train, evaluate, infer and inspect", "eformer"};
  app.require_subcommand(1);

  CommonFlags train_f, eval_f, infer_f, grad_f, viz_f, inspect_f, ablate_f;

  auto* train = app.add_subcommand("train", "Train a model and write checkpoints");
  add_common(train, train_f, "runs/train");
  std::optional<std::size_t> epochs, batch, max_steps;
  std::optional<double> lr;
  std::string resume;
  train->add_option("--epochs", epochs, "Number of epochs");
  train->add_option("--batch", batch, "Batch size");
  train->add_option("--lr", lr, "Initial learning rate");
  train->add_option("--max-steps", max_steps, "Stop after this many optimizer steps");
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Report MAD, MSE, Grad and Conn");
  add_common(eval, eval_f, "runs/eval");
  std::string eval_ckpt, pred_dir, gt_dir, split = "test", save_preds;
  eval->add_option("--checkpoint", eval_ckpt, "Checkpoint to evaluate");
  eval->add_option("--pred-dir", pred_dir, "Directory of predicted mattes (PNG)");
  eval->add_option("--gt-dir", gt_dir, "Directory of ground-truth mattes (PNG, same names)");
  eval->add_option("--split", split, "Manifest split: train | val | test")->capture_default_str();
  eval->add_option("--save-preds", save_preds, "Also write pred/ and gt/ PNGs here");

  auto* infer = app.add_subcommand("infer", "Write a matte PNG per input image");
  add_common(infer, infer_f, "runs/infer");
  std::string infer_ckpt;
  std::vector<std::string> inputs;
  infer->add_option("--checkpoint", infer_ckpt, "Checkpoint");
  infer->add_option("--input,input", inputs, "Input PNG files or directories");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every op and a tiny block");
  add_common(grad, grad_f, "runs/gradcheck");
  std::string inject, filter;
  bool ops_only = false, block_only = false, list = false;
  grad->add_option("--inject-bug", inject, "Negate the analytic gradient of this entry");
  grad->add_option("--filter", filter, "Only entries containing this text");
  grad->add_flag("--ops-only", ops_only, "Skip the end-to-end block");
  grad->add_flag("--block-only", block_only, "Only the end-to-end block");
  grad->add_flag("--list", list, "List entry names");

  auto* vis = app.add_subcommand("visualize", "Write per-tap activation heatmaps and overlays");
  add_common(vis, viz_f, "runs/visualize");
  std::string vis_ckpt, image, taps = "CA,SA,CEEB,SEB", box;
  std::size_t block = 0;
  bool gradcam = false;
  vis->add_option("--checkpoint", vis_ckpt, "Checkpoint (default: freshly initialized model)");
  vis->add_option("--image", image, "Input PNG (default: a synthetic sample)");
  vis->add_option("--taps", taps, "Comma list of CA, SA, CEEB, SEB, detector")->capture_default_str();
  vis->add_option("--block", block, "Decoder block index")->capture_default_str();
  vis->add_flag("--gradcam", gradcam, "Weight activations by the gradient of the box-mean matte");
  vis->add_option("--box", box, "Grad-CAM box y0,x0,y1,x1 (default: central half)");

  auto* inspect = app.add_subcommand("inspect", "Print the architecture summary");
  add_common(inspect, inspect_f, "runs/inspect");
  std::string inspect_ckpt;
  inspect->add_option("--checkpoint", inspect_ckpt, "Summarize a checkpoint instead of the config");

  auto* ablate = app.add_subcommand("ablate", "Train and compare the ablation matrix");
  add_common(ablate, ablate_f, "runs/ablate");
  std::size_t steps = 60;
  ablate->add_option("--steps", steps, "Optimizer steps per configuration")->capture_default_str();

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_f, epochs, batch, lr, max_steps, resume, out);
    if (*eval) return cmd_eval(eval_f, eval_ckpt, pred_dir, gt_dir, split, save_preds, out);
    if (*infer) return cmd_infer(infer_f, infer_ckpt, inputs, out, err);
    if (*grad) return cmd_gradcheck(grad_f, inject, filter, ops_only, block_only, list, out);
    if (*vis) return cmd_visualize(viz_f, vis_ckpt, image, taps, block, gradcam, box, out, err);
    if (*inspect) return cmd_inspect(inspect_f, inspect_ckpt, out);
    if (*ablate) return cmd_ablate(ablate_f, steps, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const config::ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const ArchitectureMismatch& e) {
    err << "architecture mismatch: " << e.what() << "\n";
    return kExitUsage;
  } catch (const data::ManifestError& e) {
    err << "manifest error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    err << "invalid argument: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace eformer::cli
