#include "robdet/run_config.hpp"

#include <charconv>
#include <functional>
#include <map>

#include "file_io.hpp"

namespace robdet {

namespace {

std::string_view trim(std::string_view s) {
  const auto* ws = " \t\r";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return s.substr(b, s.find_last_not_of(ws) - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty())
    throw ConfigError(std::string(key), "bad value '" + std::string(v) + "' for key '" + std::string(key) + "'");
  return out;
}

bool parse_bool(std::string_view key, std::string_view v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(std::string(key), "bad boolean '" + std::string(v) + "' for key '" + std::string(key) + "'");
}

std::string fmt(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

struct Field {
  std::function<void(RunConfig&, std::string_view key, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
Field number_field(T TrainConfig::*member) {
  return {[member](RunConfig& c, std::string_view k, std::string_view v) { c.train.*member = parse_number<T>(k, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return fmt(c.train.*member);
            else return std::to_string(c.train.*member);
          }};
}

template <typename S, typename T>
Field nested_double(S TrainConfig::*outer, T S::*inner) {
  return {[=](RunConfig& c, std::string_view k, std::string_view v) { (c.train.*outer).*inner = parse_number<T>(k, v); },
          [=](const RunConfig& c) { return fmt((c.train.*outer).*inner); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    t.emplace_back("epochs", number_field(&TrainConfig::epochs));
    t.emplace_back("batch_size", number_field(&TrainConfig::batch_size));
    t.emplace_back("seed", number_field(&TrainConfig::seed));
    t.emplace_back("alpha", number_field(&TrainConfig::alpha));
    t.emplace_back("gamma", number_field(&TrainConfig::gamma));
    t.emplace_back("nu", number_field(&TrainConfig::nu));
    t.emplace_back("beta_noise", number_field(&TrainConfig::beta_noise));
    t.emplace_back("augment_seed",
                   Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                           c.augment_seed = parse_number<std::uint64_t>(k, v);
                         },
                         [](const RunConfig& c) { return std::to_string(c.augment().seed); }});
    t.emplace_back("loss", Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                                   if (v == "cvar_vs_auc") c.train.loss_kind = LossKind::cvar_vs_auc;
                                   else if (v == "ce_auc") c.train.loss_kind = LossKind::ce_auc;
                                   else throw ConfigError(std::string(k), "loss must be cvar_vs_auc or ce_auc");
                                 },
                                 [](const RunConfig& c) {
                                   return std::string(c.train.loss_kind == LossKind::ce_auc ? "ce_auc" : "cvar_vs_auc");
                                 }});
    t.emplace_back("hidden_dims", Field{[](RunConfig& c, std::string_view k, std::string_view v) {
                                          std::vector<std::size_t> dims;
                                          while (!v.empty()) {
                                            auto comma = v.find(',');
                                            dims.push_back(parse_number<std::size_t>(k, trim(v.substr(0, comma))));
                                            v = comma == std::string_view::npos ? std::string_view{} : v.substr(comma + 1);
                                          }
                                          c.train.mlp.hidden_dims = std::move(dims);
                                        },
                                        [](const RunConfig& c) {
                                          std::string s;
                                          for (auto d : c.train.mlp.hidden_dims) s += (s.empty() ? "" : ",") + std::to_string(d);
                                          return s;
                                        }});
    t.emplace_back("dropout_rate", nested_double(&TrainConfig::mlp, &MlpSpec::dropout_rate));
    t.emplace_back("bn_epsilon", nested_double(&TrainConfig::mlp, &MlpSpec::bn_epsilon));
    t.emplace_back("bn_momentum", nested_double(&TrainConfig::mlp, &MlpSpec::bn_momentum));
    t.emplace_back("batch_norm",
                   Field{[](RunConfig& c, std::string_view k, std::string_view v) { c.train.mlp.batch_norm = parse_bool(k, v); },
                         [](const RunConfig& c) { return std::string(c.train.mlp.batch_norm ? "true" : "false"); }});
    t.emplace_back("lr", nested_double(&TrainConfig::adamw, &AdamWConfig::base_lr));
    t.emplace_back("weight_decay", nested_double(&TrainConfig::adamw, &AdamWConfig::weight_decay));
    t.emplace_back("beta1", nested_double(&TrainConfig::adamw, &AdamWConfig::beta1));
    t.emplace_back("beta2", nested_double(&TrainConfig::adamw, &AdamWConfig::beta2));
    t.emplace_back("adam_eps", nested_double(&TrainConfig::adamw, &AdamWConfig::eps));
    t.emplace_back("min_lr", number_field(&TrainConfig::min_lr));
    t.emplace_back("zeta_fake", nested_double(&TrainConfig::vs, &VsParams::zeta_fake));
    t.emplace_back("zeta_real", nested_double(&TrainConfig::vs, &VsParams::zeta_real));
    t.emplace_back("delta_fake", nested_double(&TrainConfig::vs, &VsParams::delta_fake));
    t.emplace_back("delta_real", nested_double(&TrainConfig::vs, &VsParams::delta_real));
    t.emplace_back("lambda_tolerance", number_field(&TrainConfig::lambda_tolerance));
    t.emplace_back("max_bisection_iters", number_field(&TrainConfig::max_bisection_iters));
    return t;
  }();
  return table;
}

}  // namespace

const std::vector<std::string>& run_config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, f] : fields()) k.push_back(name);
    return k;
  }();
  return keys;
}

void apply_setting(RunConfig& cfg, std::string_view key, std::string_view value) {
  for (const auto& [name, f] : fields()) {
    if (name == key) {
      f.set(cfg, key, trim(value));
      return;
    }
  }
  throw ConfigError(std::string(key), "unknown config key '" + std::string(key) + "'");
}

RunConfig parse_run_config(std::string_view text, RunConfig base) {
  std::size_t line_no = 0;
  std::map<std::string, std::size_t, std::less<>> seen;
  while (!text.empty()) {
    auto nl = text.find('\n');
    auto line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw ConfigError(std::string(line), "line " + std::to_string(line_no) + ": expected key=value");
    auto key = trim(line.substr(0, eq));
    if (auto [it, fresh] = seen.emplace(std::string(key), line_no); !fresh)
      throw ConfigError(std::string(key), "line " + std::to_string(line_no) + ": duplicate key '" + std::string(key) + "'");
    try {
      apply_setting(base, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(e.key(), "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return base;
}

RunConfig load_run_config(const std::filesystem::path& path, RunConfig base) {
  return parse_run_config(detail::read_file(path), std::move(base));
}

std::string format_run_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + "=" + f.get(cfg) + "\n";
  return out;
}

}  // namespace robdet
