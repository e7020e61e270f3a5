#include "lht/strategy_config.hpp"

#include <fstream>
#include <sstream>

#include "lht/error.hpp"

namespace lht {
namespace {

const std::vector<HeadId> kVitBHeads = {
    {8, 9}, {8, 8}, {7, 10}, {9, 12}, {7, 3},
    {9, 4}, {5, 1}, {9, 6},  {4, 11}, {8, 6},
};

const std::vector<HeadId> kVitLHeads = {
    {11, 3},  {9, 3},   {7, 9},   {11, 6},  {10, 10}, {9, 13},
    {3, 10},  {4, 14},  {10, 6},  {6, 9},   {7, 12},  {14, 16},
    {11, 8},  {10, 13}, {8, 4},   {8, 8},   {10, 8},  {9, 4},
    {2, 11},  {9, 6},   {8, 1},   {14, 1},  {16, 2},  {4, 13},
    {13, 11}, {11, 14}, {7, 4},   {14, 11}, {13, 13}, {3, 13},
};

ConfigError config_error(const std::string& what) {
  return ConfigError("strategy config: " + what);
}

const char* detection_name(DetectionKind k) {
  return k == DetectionKind::sparsity ? "sparsity" : "norm";
}

const char* head_detection_name(HeadDetection h) {
  return h == HeadDetection::own_map ? "own_map" : "shared_positions";
}

const char* normalization_name(MaskNormalization n) {
  return n == MaskNormalization::rows ? "rows" : "columns";
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& slot) {
  if (j.contains(key)) slot = j.at(key).get<T>();
}

std::vector<HeadId> parse_heads(const nlohmann::json& j) {
  std::vector<HeadId> heads;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2)
      throw config_error("head entries must be [layer, head] pairs");
    heads.push_back({e[0].get<int>(), e[1].get<int>()});
  }
  return heads;
}

}  // namespace

void AbnormalCriterion::validate() const {
  if (kind == DetectionKind::sparsity) {
    if (!(threshold > 0.0 && threshold < 1.0))
      throw ConfigError("sparsity threshold tau must lie in (0, 1), got " +
                        std::to_string(threshold));
  } else if (!(threshold > 0.0)) {
    throw ConfigError("norm threshold gamma must be positive, got " +
                      std::to_string(threshold));
  }
}

const char* profile_name(ModelProfile p) {
  switch (p) {
    case ModelProfile::vitb: return "vitb";
    case ModelProfile::vitl: return "vitl";
    case ModelProfile::custom: return "custom";
  }
  return "custom";
}

ModelProfile parse_profile(const std::string& name) {
  if (name == "vitb") return ModelProfile::vitb;
  if (name == "vitl") return ModelProfile::vitl;
  if (name == "custom") return ModelProfile::custom;
  throw config_error("unknown model_profile '" + name + "'");
}

const std::vector<HeadId>& preset_heads(ModelProfile p) {
  static const std::vector<HeadId> none;
  switch (p) {
    case ModelProfile::vitb: return kVitBHeads;
    case ModelProfile::vitl: return kVitLHeads;
    case ModelProfile::custom: return none;
  }
  return none;
}

StrategyConfig StrategyConfig::preset(ModelProfile profile) {
  StrategyConfig s;
  s.profile = profile;
  if (profile == ModelProfile::custom) return s;
  const bool base = profile == ModelProfile::vitb;
  s.variant = FinalVariant::clearclip;
  s.atr.enabled = true;
  s.atr.criterion = AbnormalCriterion::sparsity(base ? 0.5 : 0.4);
  s.ssr.enabled = true;
  s.ssr.alpha = 0.1;
  s.ssr.start_layer = base ? 10 : 17;
  s.ssr.end_layer = base ? 11 : 23;
  s.she.enabled = true;
  s.she.heads = preset_heads(profile);
  s.she.beta = 0.7;
  return s;
}

void StrategyConfig::validate(const VitConfig& model) const {
  const int last = model.layers;
  if (atr.enabled) atr.criterion.validate();
  if (ssr.enabled) {
    if (!(ssr.alpha >= 0.0 && ssr.alpha <= 1.0))
      throw config_error("ssr.alpha must lie in [0, 1]");
    if (!(1 <= ssr.start_layer && ssr.start_layer <= ssr.end_layer &&
          ssr.end_layer <= last - 1))
      throw config_error("ssr layers must satisfy 1 <= start <= end <= " +
                         std::to_string(last - 1));
  }
  if (she.enabled) {
    if (she.heads.empty()) throw config_error("she.heads is empty");
    if (!(she.beta >= 0.0 && she.beta <= 1.0))
      throw config_error("she.beta must lie in [0, 1]");
    for (const auto& h : she.heads) {
      if (h.layer < 1 || h.layer > last - 1)
        throw config_error("she head (" + std::to_string(h.layer) + "," +
                           std::to_string(h.head) + ") must come from layers 1.." +
                           std::to_string(last - 1));
      if (h.head < 1 || h.head > model.heads)
        throw config_error("she head index " + std::to_string(h.head) +
                           " outside [1, " + std::to_string(model.heads) + "]");
      if (skip.enabled && h.layer >= skip.skip_from && h.layer < skip.resume_at)
        throw config_error("she head from a skipped layer");
    }
  }
  if (skip.enabled) {
    if (!(1 <= skip.skip_from && skip.skip_from < skip.resume_at &&
          skip.resume_at <= last))
      throw config_error("skip range must satisfy 1 <= from < resume <= " +
                         std::to_string(last));
  }
}

StrategyConfig strategy_from_json(const nlohmann::json& j,
                                  const std::filesystem::path& base_dir) {
  if (!j.is_object()) throw config_error("root must be an object");
  try {
    StrategyConfig s = StrategyConfig::preset(
        parse_profile(j.value("model_profile", std::string("custom"))));
    if (j.contains("variant")) s.variant = parse_variant(j["variant"].get<std::string>());
    if (j.contains("atr")) {
      const auto& a = j["atr"];
      read_opt(a, "enabled", s.atr.enabled);
      if (a.contains("criterion")) {
        const auto c = a["criterion"].get<std::string>();
        if (c == "sparsity")
          s.atr.criterion.kind = DetectionKind::sparsity;
        else if (c == "norm")
          s.atr.criterion.kind = DetectionKind::norm;
        else
          throw config_error("unknown atr.criterion '" + c + "'");
      }
      read_opt(a, "threshold", s.atr.criterion.threshold);
      read_opt(a, "apply_to_heads", s.atr.apply_to_heads);
      if (a.contains("head_detection")) {
        const auto h = a["head_detection"].get<std::string>();
        if (h == "own_map")
          s.atr.head_detection = HeadDetection::own_map;
        else if (h == "shared_positions")
          s.atr.head_detection = HeadDetection::shared_positions;
        else
          throw config_error("unknown atr.head_detection '" + h + "'");
      }
    }
    if (j.contains("ssr")) {
      const auto& r = j["ssr"];
      read_opt(r, "enabled", s.ssr.enabled);
      read_opt(r, "alpha", s.ssr.alpha);
      read_opt(r, "start_layer", s.ssr.start_layer);
      read_opt(r, "end_layer", s.ssr.end_layer);
    }
    if (j.contains("she")) {
      const auto& h = j["she"];
      read_opt(h, "enabled", s.she.enabled);
      read_opt(h, "beta", s.she.beta);
      if (h.contains("heads")) s.she.heads = parse_heads(h["heads"]);
      if (h.contains("ranking_file")) {
        std::filesystem::path file = h["ranking_file"].get<std::string>();
        if (file.is_relative() && !base_dir.empty()) file = base_dir / file;
        s.she.heads = read_ranking(file, h.value("top_k", 10));
      } else if (h.contains("top_k")) {
        const auto k = h["top_k"].get<std::size_t>();
        if (k > s.she.heads.size())
          throw config_error("she.top_k exceeds the available head list");
        s.she.heads.resize(k);
      }
      if (h.contains("normalization")) {
        const auto n = h["normalization"].get<std::string>();
        if (n == "rows")
          s.she.normalization = MaskNormalization::rows;
        else if (n == "columns")
          s.she.normalization = MaskNormalization::columns;
        else
          throw config_error("unknown she.normalization '" + n + "'");
      }
    }
    if (j.contains("skip")) {
      const auto& k = j["skip"];
      read_opt(k, "enabled", s.skip.enabled);
      read_opt(k, "skip_from", s.skip.skip_from);
      read_opt(k, "resume_at", s.skip.resume_at);
    }
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw config_error(e.what());
  }
}

nlohmann::json to_json(const StrategyConfig& s) {
  nlohmann::json heads = nlohmann::json::array();
  for (const auto& h : s.she.heads) heads.push_back({h.layer, h.head});
  return {
      {"model_profile", profile_name(s.profile)},
      {"variant", variant_name(s.variant)},
      {"atr",
       {{"enabled", s.atr.enabled},
        {"criterion", detection_name(s.atr.criterion.kind)},
        {"threshold", s.atr.criterion.threshold},
        {"apply_to_heads", s.atr.apply_to_heads},
        {"head_detection", head_detection_name(s.atr.head_detection)}}},
      {"ssr",
       {{"enabled", s.ssr.enabled},
        {"alpha", s.ssr.alpha},
        {"start_layer", s.ssr.start_layer},
        {"end_layer", s.ssr.end_layer}}},
      {"she",
       {{"enabled", s.she.enabled},
        {"heads", heads},
        {"beta", s.she.beta},
        {"normalization", normalization_name(s.she.normalization)}}},
      {"skip",
       {{"enabled", s.skip.enabled},
        {"skip_from", s.skip.skip_from},
        {"resume_at", s.skip.resume_at}}},
  };
}

StrategyConfig load_strategy(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in, nullptr, true, /*ignore_comments=*/true);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return strategy_from_json(j, path.parent_path());
}

std::vector<HeadId> read_ranking(const std::filesystem::path& path, int top_k) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open ranking file " + path.string());
  if (top_k < 1) throw config_error("top_k must be positive");
  std::string line;
  std::getline(in, line);  // header: rank,layer,head,mean_auc
  std::vector<HeadId> heads;
  while (static_cast<int>(heads.size()) < top_k && std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string rank, layer, head;
    if (!std::getline(row, rank, ',') || !std::getline(row, layer, ',') ||
        !std::getline(row, head, ','))
      throw ConfigError("malformed ranking row: " + line);
    try {
      heads.push_back({std::stoi(layer), std::stoi(head)});
    } catch (const std::exception&) {
      throw ConfigError("malformed ranking row: " + line);
    }
  }
  if (static_cast<int>(heads.size()) < top_k)
    throw ConfigError("ranking file " + path.string() + " has fewer than " +
                      std::to_string(top_k) + " heads");
  return heads;
}

}  // namespace lht
