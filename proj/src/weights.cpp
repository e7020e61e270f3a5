#include "lht/weights.hpp"

#include <cmath>

#include "lht/error.hpp"

namespace lht {
namespace {

using Shape = std::vector<std::size_t>;

std::string layer_name(int i, const char* suffix) {
  return "layers." + std::to_string(i) + "." + suffix;
}

// Single table shared by load, save and validation.
template <typename Model, typename Fn>
void for_each_tensor(Model& m, Fn&& fn) {
  const VitConfig& c = m.config;
  auto& w = m.weights;
  const auto d = static_cast<std::size_t>(c.width);
  const auto pp = static_cast<std::size_t>(3 * c.patch_size * c.patch_size);
  const auto g = static_cast<std::size_t>(c.native_grid());
  const auto f = static_cast<std::size_t>(c.mlp_width());
  fn("patch_embed.weight", Shape{d, pp}, w.patch_weight);
  fn("patch_embed.bias", Shape{d}, w.patch_bias);
  fn("class_embedding", Shape{d}, w.class_embedding);
  fn("positional_embedding", Shape{1 + g * g, d}, w.positional_embedding);
  if (c.pre_norm) {
    fn("ln_pre.weight", Shape{d}, w.pre_norm_gain);
    fn("ln_pre.bias", Shape{d}, w.pre_norm_bias);
  }
  for (int i = 0; i < c.layers; ++i) {
    auto& l = w.layers[static_cast<std::size_t>(i)];
    fn(layer_name(i, "ln_1.weight"), Shape{d}, l.ln1_gain);
    fn(layer_name(i, "ln_1.bias"), Shape{d}, l.ln1_bias);
    fn(layer_name(i, "attn.q_proj.weight"), Shape{d, d}, l.q_weight);
    fn(layer_name(i, "attn.q_proj.bias"), Shape{d}, l.q_bias);
    fn(layer_name(i, "attn.k_proj.weight"), Shape{d, d}, l.k_weight);
    fn(layer_name(i, "attn.k_proj.bias"), Shape{d}, l.k_bias);
    fn(layer_name(i, "attn.v_proj.weight"), Shape{d, d}, l.v_weight);
    fn(layer_name(i, "attn.v_proj.bias"), Shape{d}, l.v_bias);
    fn(layer_name(i, "attn.out_proj.weight"), Shape{d, d}, l.out_weight);
    fn(layer_name(i, "attn.out_proj.bias"), Shape{d}, l.out_bias);
    fn(layer_name(i, "ln_2.weight"), Shape{d}, l.ln2_gain);
    fn(layer_name(i, "ln_2.bias"), Shape{d}, l.ln2_bias);
    fn(layer_name(i, "mlp.fc1.weight"), Shape{d, f}, l.fc1_weight);
    fn(layer_name(i, "mlp.fc1.bias"), Shape{f}, l.fc1_bias);
    fn(layer_name(i, "mlp.fc2.weight"), Shape{f, d}, l.fc2_weight);
    fn(layer_name(i, "mlp.fc2.bias"), Shape{d}, l.fc2_bias);
  }
  fn("ln_post.weight", Shape{d}, w.post_norm_gain);
  fn("ln_post.bias", Shape{d}, w.post_norm_bias);
  fn("proj", Shape{d, static_cast<std::size_t>(c.projection_dim)}, w.projection);
}

const char* activation_name(Activation a) {
  return a == Activation::gelu ? "gelu" : "quick_gelu";
}

}  // namespace

void VitConfig::validate() const {
  const auto bad = [](const std::string& why) {
    return ConfigError("invalid model config: " + why);
  };
  if (layers < 2) throw bad("at least 2 layers are required");
  if (heads < 1 || width < 1 || patch_size < 1 || projection_dim < 1)
    throw bad("extents must be positive");
  if (width % heads != 0) throw bad("width must be divisible by heads");
  if (image_size % patch_size != 0)
    throw bad("image_size must be divisible by patch_size");
  if (!(ln_eps > 0.0F)) throw bad("ln_eps must be positive");
  for (float s : image_std)
    if (!(s > 0.0F)) throw bad("image_std entries must be positive");
}

nlohmann::json to_json(const VitConfig& cfg) {
  return {{"layers", cfg.layers},
          {"heads", cfg.heads},
          {"width", cfg.width},
          {"patch_size", cfg.patch_size},
          {"image_size", cfg.image_size},
          {"ln_eps", cfg.ln_eps},
          {"projection_dim", cfg.projection_dim},
          {"activation", activation_name(cfg.activation)},
          {"pre_norm", cfg.pre_norm},
          {"image_mean", cfg.image_mean},
          {"image_std", cfg.image_std}};
}

VitConfig vit_config_from_json(const nlohmann::json& j) {
  VitConfig cfg;
  try {
    cfg.layers = j.at("layers").get<int>();
    cfg.heads = j.at("heads").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.patch_size = j.at("patch_size").get<int>();
    cfg.image_size = j.at("image_size").get<int>();
    cfg.ln_eps = j.value("ln_eps", 1e-5F);
    cfg.projection_dim = j.at("projection_dim").get<int>();
    cfg.pre_norm = j.value("pre_norm", false);
    const auto act = j.value("activation", std::string("gelu"));
    if (act == "gelu")
      cfg.activation = Activation::gelu;
    else if (act == "quick_gelu")
      cfg.activation = Activation::quick_gelu;
    else
      throw ContainerError(ContainerErrc::malformed,
                           "unknown activation '" + act + "'");
    if (j.contains("image_mean"))
      cfg.image_mean = j["image_mean"].get<std::array<float, 3>>();
    if (j.contains("image_std"))
      cfg.image_std = j["image_std"].get<std::array<float, 3>>();
  } catch (const nlohmann::json::exception& e) {
    throw ContainerError(ContainerErrc::malformed,
                         std::string("bad model config: ") + e.what());
  }
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    throw ContainerError(ContainerErrc::malformed, e.what());
  }
  return cfg;
}

std::map<std::string, std::vector<std::size_t>> expected_shapes(
    const VitConfig& cfg) {
  VitModel scratch;
  scratch.config = cfg;
  scratch.weights.layers.resize(static_cast<std::size_t>(cfg.layers));
  std::map<std::string, Shape> out;
  for_each_tensor(scratch, [&](const std::string& name, const Shape& shape,
                               Tensor&) { out.emplace(name, shape); });
  return out;
}

VitModel model_from_container(const Container& c) {
  if (!c.metadata.contains("config"))
    throw ContainerError(ContainerErrc::malformed,
                         "weight container has no 'config' header entry");
  VitModel m;
  m.config = vit_config_from_json(c.metadata["config"]);
  m.weights.layers.resize(static_cast<std::size_t>(m.config.layers));
  for_each_tensor(m, [&](const std::string& name, const Shape& shape,
                         Tensor& slot) { slot = c.get(name, shape); });
  return m;
}

VitModel load_weights(const std::filesystem::path& path) {
  return model_from_container(read_container(path));
}

void validate_model(const VitModel& model) {
  model.config.validate();
  if (model.weights.layers.size() != static_cast<std::size_t>(model.config.layers))
    throw ContainerError(ContainerErrc::shape_mismatch,
                         "layer count does not match config");
  for_each_tensor(model, [](const std::string& name, const Shape& shape,
                            const Tensor& t) {
    if (t.shape() != shape)
      throw ContainerError(ContainerErrc::shape_mismatch,
                           "tensor '" + name + "' has shape " +
                               shape_string(t.shape()) + ", expected " +
                               shape_string(shape),
                           name);
  });
}

Container model_to_container(const VitModel& model) {
  validate_model(model);
  Container c;
  c.metadata["config"] = to_json(model.config);
  for_each_tensor(model, [&](const std::string& name, const Shape&,
                             const Tensor& t) { c.tensors.emplace(name, t); });
  return c;
}

void save_weights(const std::filesystem::path& path, const VitModel& model) {
  write_container(path, model_to_container(model));
}

TextEmbeddings text_embeddings_from_container(const Container& c,
                                              std::optional<int> projection_dim) {
  const Tensor& m = c.get("text_embeddings");
  if (m.rank() != 2)
    throw ContainerError(ContainerErrc::shape_mismatch,
                         "text_embeddings must be a matrix", "text_embeddings");
  if (projection_dim && m.cols() != static_cast<std::size_t>(*projection_dim))
    throw ContainerError(ContainerErrc::shape_mismatch,
                         "text_embeddings width " + std::to_string(m.cols()) +
                             " does not match projection_dim " +
                             std::to_string(*projection_dim),
                         "text_embeddings");
  TextEmbeddings out;
  if (!c.metadata.contains("class_names"))
    throw ContainerError(ContainerErrc::malformed,
                         "text container has no 'class_names' header entry");
  out.class_names = c.metadata["class_names"].get<std::vector<std::string>>();
  if (out.class_names.size() != m.rows())
    throw ContainerError(ContainerErrc::shape_mismatch,
                         std::to_string(out.class_names.size()) +
                             " class names for " + std::to_string(m.rows()) +
                             " embedding rows",
                         "text_embeddings");
  out.matrix = normalize_rows(m);
  return out;
}

TextEmbeddings load_text_embeddings(const std::filesystem::path& path,
                                    std::optional<int> projection_dim) {
  return text_embeddings_from_container(read_container(path), projection_dim);
}

void save_text_embeddings(const std::filesystem::path& path,
                          const TextEmbeddings& text) {
  Container c;
  c.metadata["class_names"] = text.class_names;
  c.tensors.emplace("text_embeddings", text.matrix);
  write_container(path, c);
}

}  // namespace lht
