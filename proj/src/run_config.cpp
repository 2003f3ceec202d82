#include "slicefusion/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "slicefusion/io.hpp"

namespace slicefusion {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  return s.substr(first, s.find_last_not_of(" \t\r") - first + 1);
}

std::size_t to_size(std::string_view v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

double to_double(std::string_view v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw ConfigError("expected a number, got '" + std::string(v) + "'");
  return out;
}

bool to_bool(std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected true or false, got '" + std::string(v) + "'");
}

std::string fmt(double x) {
  std::ostringstream out;
  out.precision(17);
  out << x;
  return out.str();
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class F>
Key size_key(const char* name, F field) {
  return {name, [field](RunConfig& c, std::string_view v) { field(c) = to_size(v); },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

const std::vector<Key>& keys() {
  static const std::vector<Key> table = [] {
    std::vector<Key> k;
    k.push_back(size_key("depth", [](auto& c) -> auto& { return c.model.encoder.depth; }));
    k.push_back(size_key("height", [](auto& c) -> auto& { return c.model.encoder.height; }));
    k.push_back(size_key("width", [](auto& c) -> auto& { return c.model.encoder.width; }));
    k.push_back(size_key("patch_depth", [](auto& c) -> auto& { return c.model.encoder.patch_depth; }));
    k.push_back(size_key("patch_height", [](auto& c) -> auto& { return c.model.encoder.patch_height; }));
    k.push_back(size_key("patch_width", [](auto& c) -> auto& { return c.model.encoder.patch_width; }));
    k.push_back(size_key("pool", [](auto& c) -> auto& { return c.model.encoder.pool; }));
    k.push_back(size_key("hidden", [](auto& c) -> auto& { return c.model.encoder.hidden; }));
    k.push_back(size_key("tokens_2d", [](auto& c) -> auto& { return c.model.encoder.tokens_2d; }));
    k.push_back(size_key("text_dim", [](auto& c) -> auto& { return c.model.encoder.text_dim; }));
    k.push_back({"mixing", [](RunConfig& c, std::string_view v) { c.model.encoder.mixing = to_bool(v); },
                 [](const RunConfig& c) { return std::string(c.model.encoder.mixing ? "true" : "false"); }});
    k.push_back(size_key("decoder_width", [](auto& c) -> auto& { return c.model.decoder.width; }));
    k.push_back(size_key("ff_hidden", [](auto& c) -> auto& { return c.model.decoder.ff_hidden; }));
    k.push_back(size_key("vocab", [](auto& c) -> auto& { return c.model.decoder.vocab; }));
    k.push_back(size_key("max_len", [](auto& c) -> auto& { return c.model.decoder.max_len; }));
    k.push_back({"stage", [](RunConfig& c, std::string_view v) { c.train.stage = parse_stage(v); },
                 [](const RunConfig& c) { return std::string(stage_name(c.train.stage)); }});
    k.push_back({"strategy", [](RunConfig& c, std::string_view v) { c.train.strategy = parse_strategy(v); },
                 [](const RunConfig& c) { return std::string(strategy_name(c.train.strategy)); }});
    k.push_back({"lr", [](RunConfig& c, std::string_view v) { c.train.lr = to_double(v); },
                 [](const RunConfig& c) { return fmt(c.train.lr); }});
    k.push_back(size_key("epochs", [](auto& c) -> auto& { return c.train.epochs; }));
    k.push_back(size_key("batch_size", [](auto& c) -> auto& { return c.train.batch_size; }));
    k.push_back({"seed", [](RunConfig& c, std::string_view v) { c.train.seed = to_size(v); },
                 [](const RunConfig& c) { return std::to_string(c.train.seed); }});
    k.push_back({"max_steps", [](RunConfig& c, std::string_view v) { c.train.max_steps = to_size(v); },
                 [](const RunConfig& c) { return c.train.max_steps ? std::to_string(*c.train.max_steps) : std::string(); }});
    k.push_back({"data_dir", [](RunConfig& c, std::string_view v) { c.data_dir = v; },
                 [](const RunConfig& c) { return c.data_dir.string(); }});
    k.push_back({"checkpoint", [](RunConfig& c, std::string_view v) { c.checkpoint = v; },
                 [](const RunConfig& c) { return c.checkpoint.string(); }});
    k.push_back({"output_dir", [](RunConfig& c, std::string_view v) { c.output_dir = v; },
                 [](const RunConfig& c) { return c.output_dir.string(); }});
    return k;
  }();
  return table;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  try {
    train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
}

RunConfig parse_run_config(std::string_view text, const std::filesystem::path& base_dir) {
  RunConfig cfg;
  std::set<std::string, std::less<>> seen;
  std::size_t line_no = 0;
  while (!text.empty()) {
    ++line_no;
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    const std::string where = "config line " + std::to_string(line_no) + ": ";
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = std::find_if(keys().begin(), keys().end(), [&](const Key& k) { return k.name == key; });
    if (it == keys().end()) throw ConfigError(where + "unknown key '" + std::string(key) + "'");
    if (!seen.insert(std::string(key)).second) throw ConfigError(where + "duplicate key '" + std::string(key) + "'");
    if (value.empty()) throw ConfigError(where + "empty value for '" + std::string(key) + "'");
    try {
      it->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError(where + e.what());
    }
  }
  for (auto* p : {&cfg.data_dir, &cfg.checkpoint, &cfg.output_dir})
    if (!p->empty() && p->is_relative() && !base_dir.empty()) *p = base_dir / *p;
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_file(path), path.parent_path());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& k : keys()) {
    const std::string v = k.get(cfg);
    if (!v.empty()) out += std::string(k.name) + " = " + v + "\n";
  }
  return out;
}

}  // namespace slicefusion
