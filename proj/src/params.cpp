#include "slicefusion/params.hpp"

#include <cmath>
#include <json.hpp>

#include "slicefusion/io.hpp"
#include "slicefusion/rng.hpp"

namespace slicefusion {

using json = nlohmann::json;

const char* group_name(Group g) {
  switch (g) {
    case Group::enc3d: return "enc3d";
    case Group::enc2d: return "enc2d";
    case Group::conn3d: return "conn3d";
    case Group::conn2d: return "conn2d";
    case Group::text_enc: return "text_enc";
    case Group::scorer_mlp: return "scorer_mlp";
    case Group::decoder: return "decoder";
  }
  return "?";
}

Group parse_group(std::string_view name) {
  for (auto g : kAllGroups)
    if (name == group_name(g)) return g;
  throw std::invalid_argument("unknown parameter group '" + std::string(name) + "'");
}

Tensor& ParamGroup::get(std::string_view name) {
  for (auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

const Tensor& ParamGroup::get(std::string_view name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

std::size_t ParamGroup::numel() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.value.size();
  return n;
}

ModelParams::ModelParams(ModelConfig config, std::uint64_t seed) : config_(config), seed_(seed) {}

void ModelParams::freeze_all(bool frozen) {
  for (auto& g : groups_) g.frozen = frozen;
}

std::size_t ModelParams::numel() const {
  std::size_t n = 0;
  for (const auto& g : groups_) n += g.numel();
  return n;
}

std::size_t ModelParams::trainable_numel() const {
  std::size_t n = 0;
  for (const auto& g : groups_)
    if (!g.frozen) n += g.numel();
  return n;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  for (std::size_t i = 0; i < a.groups_.size(); ++i) {
    const auto& ga = a.groups_[i].tensors;
    const auto& gb = b.groups_[i].tensors;
    if (ga.size() != gb.size()) return false;
    for (std::size_t k = 0; k < ga.size(); ++k)
      if (ga[k].name != gb[k].name || !(ga[k].value == gb[k].value)) return false;
  }
  return true;
}

namespace {

Tensor uniform_init(Rng& rng, Shape shape, std::size_t fan_in) {
  Tensor t(std::move(shape));
  const double bound = std::sqrt(3.0 / static_cast<double>(fan_in));
  for (auto& x : t.data()) x = rng.uniform(-bound, bound);
  return t;
}

void add_linear(ParamGroup& g, Rng& rng, const std::string& prefix, std::size_t in, std::size_t out) {
  g.tensors.push_back({prefix + "w", uniform_init(rng, {in, out}, in)});
  g.tensors.push_back({prefix + "b", uniform_init(rng, {out}, in)});
}

}  // namespace

ModelParams init_params(std::uint64_t seed, const ModelConfig& config) {
  config.validate();
  const auto& e = config.encoder;
  const auto& d = config.decoder;
  ModelParams p(config, seed);
  Rng root(seed);
  auto stream = [&](Group g) { return root.derive(static_cast<std::uint64_t>(g) + 1); };

  {
    auto rng = stream(Group::enc3d);
    auto& g = p.group(Group::enc3d);
    add_linear(g, rng, "patch_", e.patch_voxels_3d(), e.hidden);
    if (e.mixing) {
      g.tensors.push_back({"mix_w", uniform_init(rng, {e.pre_pool_tokens(), e.pre_pool_tokens()}, e.pre_pool_tokens())});
      g.tensors.push_back({"mix_b", uniform_init(rng, {e.hidden}, e.pre_pool_tokens())});
    }
  }
  {
    auto rng = stream(Group::enc2d);
    auto& g = p.group(Group::enc2d);
    const std::size_t side = e.patch_side_2d();
    add_linear(g, rng, "patch_", side * side, e.hidden);
    if (e.mixing) {
      g.tensors.push_back({"mix_w", uniform_init(rng, {e.tokens_2d, e.tokens_2d}, e.tokens_2d)});
      g.tensors.push_back({"mix_b", uniform_init(rng, {e.hidden}, e.tokens_2d)});
    }
  }
  for (auto grp : {Group::conn3d, Group::conn2d}) {
    auto rng = stream(grp);
    auto& g = p.group(grp);
    add_linear(g, rng, "fc1_", e.hidden, e.hidden);
    add_linear(g, rng, "fc2_", e.hidden, e.hidden);
  }
  {
    auto rng = stream(Group::text_enc);
    p.group(Group::text_enc).tensors.push_back({"embed", uniform_init(rng, {d.vocab, e.text_dim}, 1)});
  }
  {
    auto rng = stream(Group::scorer_mlp);
    auto& g = p.group(Group::scorer_mlp);
    add_linear(g, rng, "fc1_", e.text_dim, e.hidden);
    add_linear(g, rng, "fc2_", e.hidden, e.hidden);
  }
  {
    auto rng = stream(Group::decoder);
    auto& g = p.group(Group::decoder);
    add_linear(g, rng, "img_", e.hidden, d.width);
    g.tensors.push_back({"embed", uniform_init(rng, {d.vocab, d.width}, 1)});
    for (const char* name : {"wq", "wk", "wv", "wo"}) g.tensors.push_back({name, uniform_init(rng, {d.width, d.width}, d.width)});
    add_linear(g, rng, "ff1_", d.width, d.ff_hidden);
    add_linear(g, rng, "ff2_", d.ff_hidden, d.width);
    add_linear(g, rng, "out_", d.width, d.vocab);
  }
  return p;
}

GradientSet::GradientSet(const ModelParams& params) {
  for (auto g : kAllGroups) {
    auto& dst = grads_[static_cast<std::size_t>(g)];
    for (const auto& t : params.group(g).tensors) dst.push_back(Tensor::zeros(t.value.shape()));
  }
}

void GradientSet::add(const GradientSet& other) {
  for (std::size_t g = 0; g < grads_.size(); ++g)
    for (std::size_t i = 0; i < grads_[g].size(); ++i) {
      auto d = grads_[g][i].data();
      auto s = other.grads_[g][i].data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += s[k];
    }
}

void GradientSet::scale(double factor) {
  for (auto& group : grads_)
    for (auto& t : group)
      for (auto& x : t.data()) x *= factor;
}

void GradientSet::zero() {
  for (auto& group : grads_)
    for (auto& t : group) t.fill(0.0);
}

BoundParams::BoundParams(Graph& graph, const ModelParams& params, bool track_gradients)
    : graph_(&graph), params_(&params) {
  for (auto g : kAllGroups) {
    const auto& group = params.group(g);
    auto& vars = vars_[static_cast<std::size_t>(g)];
    for (const auto& t : group.tensors) {
      vars.push_back(track_gradients && !group.frozen ? graph.parameter(t.value) : graph.constant_ref(t.value));
    }
  }
}

Var BoundParams::operator()(Group g, std::string_view name) const {
  const auto& group = params_->group(g);
  for (std::size_t i = 0; i < group.tensors.size(); ++i)
    if (group.tensors[i].name == name) return vars_[static_cast<std::size_t>(g)][i];
  throw std::out_of_range(std::string("no parameter ") + group_name(g) + "." + std::string(name));
}

void BoundParams::accumulate(GradientSet& out) const {
  for (auto g : kAllGroups) {
    const auto& vars = vars_[static_cast<std::size_t>(g)];
    for (std::size_t i = 0; i < vars.size(); ++i) {
      if (!graph_->requires_grad(vars[i])) continue;
      const Tensor& grad = graph_->grad(vars[i]);
      auto d = out.at(g, i).data();
      for (std::size_t k = 0; k < d.size(); ++k) d[k] += grad[k];
    }
  }
}

// ---------------------------------------------------------------------------
// checkpoints

namespace {

json config_to_json(const ModelConfig& c) {
  const auto& e = c.encoder;
  const auto& d = c.decoder;
  return json{{"depth", e.depth},
              {"height", e.height},
              {"width", e.width},
              {"patch_depth", e.patch_depth},
              {"patch_height", e.patch_height},
              {"patch_width", e.patch_width},
              {"pool", e.pool},
              {"hidden", e.hidden},
              {"tokens_2d", e.tokens_2d},
              {"text_dim", e.text_dim},
              {"mixing", e.mixing},
              {"decoder_width", d.width},
              {"ff_hidden", d.ff_hidden},
              {"vocab", d.vocab},
              {"max_len", d.max_len}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  auto& e = c.encoder;
  auto& d = c.decoder;
  e.depth = j.at("depth");
  e.height = j.at("height");
  e.width = j.at("width");
  e.patch_depth = j.at("patch_depth");
  e.patch_height = j.at("patch_height");
  e.patch_width = j.at("patch_width");
  e.pool = j.at("pool");
  e.hidden = j.at("hidden");
  e.tokens_2d = j.at("tokens_2d");
  e.text_dim = j.at("text_dim");
  e.mixing = j.at("mixing");
  d.width = j.at("decoder_width");
  d.ff_hidden = j.at("ff_hidden");
  d.vocab = j.at("vocab");
  d.max_len = j.at("max_len");
  c.validate();
  return c;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  json groups = json::object();
  for (auto g : kAllGroups) {
    const auto& group = params.group(g);
    json tensors = json::array();
    for (const auto& t : group.tensors) {
      std::vector<float> data(t.value.size());
      for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(t.value[i]);
      tensors.push_back({{"name", t.name}, {"shape", t.value.shape()}, {"data", data}});
    }
    groups[group_name(g)] = {{"frozen", group.frozen}, {"tensors", tensors}};
  }
  json doc{{"format", "slicefusion-checkpoint"},
           {"version", 1},
           {"seed", params.seed()},
           {"config", config_to_json(params.config())},
           {"groups", groups}};
  write_file_atomic(path, doc.dump());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& ex) {
    throw std::runtime_error("malformed checkpoint " + path.string() + ": " + ex.what());
  }
  if (doc.value("format", "") != "slicefusion-checkpoint") throw std::runtime_error("not a checkpoint: " + path.string());
  const ModelConfig config = config_from_json(doc.at("config"));
  const std::uint64_t seed = doc.at("seed");
  // Shapes and names must match a freshly initialised model of the same config.
  ModelParams p = init_params(seed, config);
  for (auto g : kAllGroups) {
    const json& jg = doc.at("groups").at(group_name(g));
    auto& group = p.group(g);
    group.frozen = jg.at("frozen");
    const json& tensors = jg.at("tensors");
    if (tensors.size() != group.tensors.size()) {
      throw std::runtime_error(std::string("checkpoint group ") + group_name(g) + " has wrong tensor count");
    }
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      auto& dst = group.tensors[i];
      const json& jt = tensors[i];
      if (jt.at("name") != dst.name || jt.at("shape").get<Shape>() != dst.value.shape()) {
        throw std::runtime_error("checkpoint tensor " + dst.name + " does not match the configured model");
      }
      const auto data = jt.at("data").get<std::vector<float>>();
      if (data.size() != dst.value.size()) throw std::runtime_error("checkpoint tensor " + dst.name + " truncated");
      for (std::size_t k = 0; k < data.size(); ++k) dst.value[k] = data[k];
    }
  }
  return p;
}

}  // namespace slicefusion
