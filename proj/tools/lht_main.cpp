// lht: layer/head diagnostics and training-free segmentation on an exported
// CLIP vision encoder.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lht/container.hpp"
#include "lht/dataset.hpp"
#include "lht/diagnostics.hpp"
#include "lht/error.hpp"
#include "lht/image.hpp"
#include "lht/parallel.hpp"
#include "lht/parity.hpp"
#include "lht/pipeline.hpp"
#include "lht/segmentation.hpp"
#include "lht/strategy_config.hpp"
#include "lht/weights.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using lht::SampleEntry;
using lht::load_labeled;
using lht::read_sample_list;
using lht::subsample;

namespace {

struct Globals {
  std::string weights;
  std::string text;
  std::string config;
  int threads = 1;
  std::uint64_t seed = 0;
  std::string out_dir = ".";
  std::size_t num_samples = 1000;
  int ignore_index = 255;
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.8f", v);
  return buf;
}

std::string hex32(std::uint32_t v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%08x", v);
  return buf;
}

class Run {
 public:
  Run(std::string subcommand, const Globals& g)
      : g_(g), start_(std::chrono::steady_clock::now()) {
    manifest_["subcommand"] = std::move(subcommand);
    manifest_["seed"] = g.seed;
    manifest_["threads"] = g.threads;
    manifest_["checksums"] = json::object();
    manifest_["outputs"] = json::array();
    fs::create_directories(g.out_dir);
  }

  lht::VitModel model() {
    if (g_.weights.empty()) throw lht::ConfigError("--weights is required");
    checksum(g_.weights);
    lht::VitModel m = lht::load_weights(g_.weights);
    manifest_["model_config"] = lht::to_json(m.config);
    return m;
  }

  std::optional<lht::TextEmbeddings> text(const lht::VitModel& m, bool required) {
    if (g_.text.empty()) {
      if (required) throw lht::ConfigError("--text is required");
      return std::nullopt;
    }
    checksum(g_.text);
    auto t = lht::load_text_embeddings(g_.text, m.config.projection_dim);
    manifest_["classes"] = t.class_names;
    return t;
  }

  lht::StrategyConfig strategy(const lht::VitModel& m) {
    lht::StrategyConfig s = lht::StrategyConfig::plain();
    if (!g_.config.empty()) {
      checksum(g_.config);
      s = lht::load_strategy(g_.config);
    }
    s.validate(m.config);
    manifest_["config"] = lht::to_json(s);
    return s;
  }

  void samples(const std::vector<SampleEntry>& list) {
    json arr = json::array();
    for (const auto& e : list) {
      json row = {{"image", e.image.string()}, {"dataset", e.dataset}};
      if (!e.label.empty()) row["label"] = e.label.string();
      arr.push_back(row);
    }
    manifest_["samples"] = arr;
  }

  fs::path output(const std::string& name) {
    const fs::path p = fs::path(g_.out_dir) / name;
    manifest_["outputs"].push_back(p.string());
    return p;
  }

  json& manifest() { return manifest_; }

  void finish() {
    for (const auto& p : manifest_["outputs"])
      if (!fs::exists(p.get<std::string>()))
        throw lht::Error("declared output " + p.get<std::string>() + " was not written");
    manifest_["wall_time_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream out(fs::path(g_.out_dir) / "run_manifest.json");
    out << manifest_.dump(2) << "\n";
  }

 private:
  void checksum(const std::string& path) {
    if (!fs::exists(path)) throw lht::DataError("cannot open " + path);
    manifest_["checksums"][path] = hex32(lht::file_crc32(path));
  }

  const Globals& g_;
  json manifest_;
  std::chrono::steady_clock::time_point start_;
};

std::ofstream open_csv(const fs::path& p) {
  std::ofstream out(p);
  if (!out) throw lht::DataError("cannot write " + p.string());
  return out;
}

void write_ranking(const fs::path& p, const std::vector<lht::HeadScore>& ranking) {
  auto out = open_csv(p);
  out << "rank,layer,head,mean_auc\n";
  for (std::size_t i = 0; i < ranking.size(); ++i)
    out << i + 1 << "," << ranking[i].id.layer << "," << ranking[i].id.head << ","
        << fmt(ranking[i].mean_auc) << "\n";
}

void write_metrics(const fs::path& p, const lht::EvalMetrics& m,
                   const std::vector<std::string>& names) {
  auto out = open_csv(p);
  out << "class_name,intersection,union,iou\n";
  for (std::size_t c = 0; c < m.iou.size(); ++c)
    out << (c < names.size() ? names[c] : std::to_string(c)) << "," << m.intersection[c]
        << "," << m.union_[c] << "," << (std::isnan(m.iou[c]) ? "" : fmt(m.iou[c])) << "\n";
  out << "mIoU,,," << fmt(m.miou) << "\n";
}

// --- subcommands -----------------------------------------------------------

void analyze_layers(const Globals& g, const std::string& list) {
  Run run("analyze-layers", g);
  const auto model = run.model();
  const auto text = run.text(model, false);
  const auto entries = subsample(read_sample_list(list, true), g.num_samples, g.seed);
  run.samples(entries);
  std::vector<lht::LabeledSample> samples;
  for (const auto& e : entries) samples.push_back(load_labeled(e, model, g.ignore_index));
  const auto rep = lht::analyze_layers(samples, model, text ? &*text : nullptr, g.threads);
  auto out = open_csv(run.output("layer_auc.csv"));
  out << "layer,auc,auc_pooled,alignment\n";
  for (std::size_t i = 0; i < rep.layer_auc.size(); ++i)
    out << i + 1 << "," << fmt(rep.layer_auc[i]) << "," << fmt(rep.layer_auc_pooled[i]) << ","
        << (rep.layer_alignment.empty() ? "" : fmt(rep.layer_alignment[i])) << "\n";
  out.close();
  run.finish();
}

void analyze_heads(const Globals& g, const std::string& list, double tau, bool no_atr) {
  Run run("analyze-heads", g);
  const auto model = run.model();
  const auto entries = subsample(read_sample_list(list, true), g.num_samples, g.seed);
  run.samples(entries);
  lht::HeadRankingOptions opts;
  opts.criterion = lht::AbnormalCriterion::sparsity(tau);
  opts.apply_atr = !no_atr;
  opts.criterion.validate();
  run.manifest()["head_ranking"] = {{"tau", tau}, {"atr", !no_atr}};

  std::vector<std::pair<std::string, std::map<lht::HeadId, double>>> per_image(entries.size());
  std::vector<lht::LabeledSample> samples;
  for (const auto& e : entries) samples.push_back(load_labeled(e, model, g.ignore_index));
  lht::parallel_for(samples.size(), g.threads, [&](std::size_t i) {
    per_image[i] = {samples[i].dataset, lht::head_aucs(samples[i], model, opts)};
  });
  const auto ranking = lht::aggregate_head_scores(per_image);

  auto out = open_csv(run.output("head_auc.csv"));
  out << "layer,head,dataset,auc\n";
  std::vector<lht::HeadScore> by_id = ranking;
  std::sort(by_id.begin(), by_id.end(),
            [](const lht::HeadScore& a, const lht::HeadScore& b) { return a.id < b.id; });
  for (const auto& s : by_id)
    for (const auto& [ds, v] : s.dataset_auc)
      out << s.id.layer << "," << s.id.head << "," << ds << "," << fmt(v) << "\n";
  out.close();
  write_ranking(run.output("head_ranking.csv"), ranking);
  run.finish();
}

void hoyer(const Globals& g, const std::string& image_path, double tau) {
  Run run("hoyer", g);
  const auto model = run.model();
  run.samples({{image_path, {}, "default"}});
  lht::Image img = lht::load_image(image_path);
  const int s = model.config.image_size;
  if (img.height != s || img.width != s) img = lht::resize_bilinear(img, s, s);
  lht::TapRequest taps;
  for (int l = 1; l <= model.config.layers; ++l) taps.layers.insert(l);
  const auto fr = lht::forward(img, model, lht::StrategyConfig::plain(), taps, g.threads);

  auto out = open_csv(run.output("hoyer_map.csv"));
  out << "layer,row,col,score,flagged\n";
  std::vector<lht::AbnormalObservation> obs;
  for (const auto& [layer, rec] : fr.taps) {
    const auto& x = rec.output;
    for (std::size_t p = 0; p < x.patch_count(); ++p) {
      const double h = lht::hoyer_score(x.patch(p));
      out << layer << "," << p / x.grid_w << "," << p % x.grid_w << "," << fmt(h) << ","
          << (h > tau ? 1 : 0) << "\n";
    }
    obs.push_back({0, layer, x, lht::detect_abnormal(x, lht::AbnormalCriterion::sparsity(tau))});
  }
  out.close();
  json stats = json::object();
  if (const auto st = lht::replace_stats(obs))
    stats = {{"abnormal_tokens", st->tokens},
             {"pairs", st->pairs},
             {"mean_cosine", st->mean_cosine},
             {"min_cosine", st->min_cosine},
             {"mean_cosine_to_cls", st->mean_cosine_to_cls},
             {"mean_cosine_to_normal_mean", st->mean_cosine_to_normal_mean}};
  run.manifest()["abnormal_stats"] = stats;
  run.manifest()["tau"] = tau;
  run.finish();
}

lht::SlideConfig slide_config(int short_side, int crop, int stride, bool cityscapes) {
  lht::SlideConfig c = cityscapes ? lht::SlideConfig::cityscapes() : lht::SlideConfig{};
  if (short_side > 0) c.short_side = short_side;
  if (crop > 0) c.crop = crop;
  if (stride > 0) c.stride = stride;
  return c;
}

void segment(const Globals& g, const std::string& list, const std::string& image,
             const lht::SlideConfig& slide) {
  Run run("segment", g);
  const auto model = run.model();
  const auto text = *run.text(model, true);
  const auto strategy = run.strategy(model);
  slide.validate(model.config.patch_size);
  run.manifest()["slide"] = {
      {"short_side", slide.short_side}, {"crop", slide.crop}, {"stride", slide.stride}};
  if (list.empty() == image.empty())
    throw lht::ConfigError("segment needs exactly one of --samples or --image");
  const auto entries = image.empty()
                           ? subsample(read_sample_list(list, false), g.num_samples, g.seed)
                           : std::vector<SampleEntry>{{image, {}, "default"}};
  run.samples(entries);

  fs::create_directories(fs::path(g.out_dir) / "pred");
  lht::IouAccumulator acc(static_cast<int>(text.classes()));
  bool any_labels = false;
  for (const auto& e : entries) {
    const lht::Image img = lht::load_image(e.image);
    const lht::ClassMap pred = lht::slide_segment(img, model, strategy, text, slide, g.threads);
    lht::save_label_png(run.output("pred/" + e.image.stem().string() + ".png"), pred);
    if (!e.label.empty()) {
      acc.add(pred, lht::load_label_map(e.label), g.ignore_index);
      any_labels = true;
    }
  }
  if (any_labels) write_metrics(run.output("metrics.csv"), acc.metrics(), text.class_names);
  run.finish();
}

void eval(const Globals& g, const std::string& pred_dir, const std::string& gt_dir,
          int classes) {
  Run run("eval", g);
  std::vector<std::string> names;
  if (!g.text.empty()) {
    const auto t = lht::load_text_embeddings(g.text);
    names = t.class_names;
    if (classes <= 0) classes = static_cast<int>(names.size());
  }
  if (classes <= 0) throw lht::ConfigError("eval needs --classes or --text");
  if (!fs::is_directory(pred_dir) || !fs::is_directory(gt_dir))
    throw lht::DataError("--pred-dir and --gt-dir must be directories");
  std::vector<fs::path> preds;
  for (const auto& e : fs::directory_iterator(pred_dir))
    if (e.is_regular_file()) preds.push_back(e.path());
  std::sort(preds.begin(), preds.end());
  if (preds.empty()) throw lht::DataError("no predictions in " + pred_dir);
  lht::IouAccumulator acc(classes);
  json pairs = json::array();
  for (const auto& p : preds) {
    const fs::path gt = fs::path(gt_dir) / p.filename();
    if (!fs::exists(gt)) throw lht::DataError("no ground truth for " + p.filename().string());
    acc.add(lht::load_label_map(p), lht::load_label_map(gt), g.ignore_index);
    pairs.push_back({{"pred", p.string()}, {"gt", gt.string()}});
  }
  run.manifest()["samples"] = pairs;
  write_metrics(run.output("metrics.csv"), acc.metrics(), names);
  run.finish();
}

void rank_export(const Globals& g, const std::string& ranking, int top_k,
                 const std::string& out_name) {
  Run run("rank-export", g);
  lht::StrategyConfig s = g.config.empty() ? lht::StrategyConfig::plain()
                                           : lht::load_strategy(g.config);
  s.she.enabled = true;
  s.she.heads = lht::read_ranking(ranking, top_k);
  run.manifest()["ranking"] = ranking;
  run.manifest()["top_k"] = top_k;
  run.manifest()["config"] = lht::to_json(s);
  std::ofstream out(run.output(out_name));
  out << lht::to_json(s).dump(2) << "\n";
  out.close();
  run.finish();
}

/// Writes parity.csv, then fails (exit 1) when the worst deviation exceeds
/// the tolerance.
void parity(const Globals& g, const std::string& probe, double tolerance) {
  Run run("parity", g);
  const auto model = run.model();
  if (!fs::exists(probe)) throw lht::DataError("cannot open " + probe);
  run.manifest()["probe"] = {{"path", probe}, {"crc32", hex32(lht::file_crc32(probe))}};
  const lht::ParityReport rep = lht::check_parity(model, lht::read_container(probe), g.threads);
  auto out = open_csv(run.output("parity.csv"));
  out << "tensor,max_rel_deviation\n";
  for (const auto& [name, d] : rep.deviation) out << name << "," << fmt(d) << "\n";
  out.close();
  run.manifest()["tolerance"] = tolerance;
  run.manifest()["worst_deviation"] = rep.worst;
  run.finish();
  std::cout << "worst deviation " << fmt(rep.worst) << "\n";
  if (!rep.passed(tolerance))
    throw lht::Error("parity deviation " + fmt(rep.worst) + " exceeds " + fmt(tolerance));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LHT-CLIP engine: layer/head diagnostics and training-free segmentation"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--weights", g.weights, "model container (.lhtw)");
  app.add_option("--text", g.text, "class text embeddings (.lhtw)");
  app.add_option("--config", g.config, "strategy config (JSON)");
  app.add_option("--threads", g.threads, "worker threads")->check(CLI::PositiveNumber);
  app.add_option("--seed", g.seed, "sampling seed");
  app.add_option("--out-dir", g.out_dir, "output directory");
  app.add_option("--num-samples", g.num_samples, "max samples drawn from a list");
  app.add_option("--ignore-index", g.ignore_index, "ground-truth ignore label");
  app.fallthrough();

  std::string samples, image, pred_dir, gt_dir, ranking, out_name = "strategy.json";
  double tau = 0.5;
  bool no_atr = false, cityscapes = false;
  int short_side = 0, crop = 0, stride = 0, classes = 0, top_k = 10;

  auto* layers = app.add_subcommand("analyze-layers", "per-layer AUC and alignment");
  layers->add_option("--samples", samples, "sample list")->required();

  auto* heads = app.add_subcommand("analyze-heads", "per-head AUC and ranking");
  heads->add_option("--samples", samples, "sample list")->required();
  heads->add_option("--tau", tau, "Hoyer threshold for head-map ATR");
  heads->add_flag("--no-atr", no_atr, "rank heads without ATR");

  auto* hoy = app.add_subcommand("hoyer", "Hoyer score map over layers and positions");
  hoy->add_option("--image", image, "input image")->required();
  hoy->add_option("--tau", tau, "flagging threshold");

  auto* seg = app.add_subcommand("segment", "sliding-window segmentation");
  seg->add_option("--samples", samples, "sample list (label column optional)");
  seg->add_option("--image", image, "single input image");
  seg->add_option("--short-side", short_side, "resize target for the short side");
  seg->add_option("--crop", crop, "window size");
  seg->add_option("--stride", stride, "window stride");
  seg->add_flag("--cityscapes", cityscapes, "use the Cityscapes short side (560)");

  auto* ev = app.add_subcommand("eval", "mIoU of prediction PNGs against ground truth");
  ev->add_option("--pred-dir", pred_dir)->required();
  ev->add_option("--gt-dir", gt_dir)->required();
  ev->add_option("--classes", classes, "class count (default: from --text)");

  auto* rx = app.add_subcommand("rank-export", "turn a head ranking into a strategy config");
  rx->add_option("--ranking", ranking, "head_ranking.csv")->required();
  rx->add_option("--top-k", top_k, "number of heads")->check(CLI::PositiveNumber);
  rx->add_option("--output", out_name, "file name inside --out-dir");

  std::string probe;
  double tolerance = 1e-3;
  auto* par = app.add_subcommand("parity", "compare layer outputs with an exporter probe");
  par->add_option("--probe", probe, "probe container (.lhtw)")->required();
  par->add_option("--tolerance", tolerance, "max relative deviation")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return e.get_exit_code() == 0 ? app.exit(e) : (app.exit(e), 2);
  }

  try {
    if (*layers) analyze_layers(g, samples);
    else if (*heads) analyze_heads(g, samples, tau, no_atr);
    else if (*hoy) hoyer(g, image, tau);
    else if (*seg) segment(g, samples, image, slide_config(short_side, crop, stride, cityscapes));
    else if (*ev) eval(g, pred_dir, gt_dir, classes);
    else if (*rx) rank_export(g, ranking, top_k, out_name);
    else if (*par) parity(g, probe, tolerance);
  } catch (const lht::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const lht::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
