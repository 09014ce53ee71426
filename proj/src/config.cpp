#include "ppct/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

#include "ppct/csv_io.hpp"

namespace ppct {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const auto comma = s.find(',', start);
    const auto piece = trim(s.substr(start, comma == std::string_view::npos ? s.npos : comma - start));
    if (!piece.empty()) out.push_back(piece);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_value(const std::string& text, const std::string& field) {
  T v{};
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last || text.empty())
    throw ConfigError(field, "cannot parse '" + text + "'");
  return v;
}

bool parse_bool(const std::string& text, const std::string& field) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(field, "expected true/false, got '" + text + "'");
}

std::string to_text(double v) { return format_double(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
template <typename T>
  requires std::is_integral_v<T>
std::string to_text(T v) { return std::to_string(v); }

struct Field {
  const char* section;
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <typename T, typename Member>
Field scalar(const char* section, const char* key, Member member) {
  return {section, key,
          [member](const RunConfig& c) { return to_text(static_cast<T>(member(const_cast<RunConfig&>(c)))); },
          [member](RunConfig& c, const std::string& text, const std::string& field) {
            if constexpr (std::is_same_v<T, bool>) {
              member(c) = parse_bool(text, field);
            } else {
              member(c) = parse_value<T>(text, field);
            }
          }};
}

#define PPCT_FIELD(T, section, key, expr) \
  scalar<T>(section, key, [](RunConfig& c) -> auto& { return expr; })

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f = {
        PPCT_FIELD(std::uint64_t, "gen", "n_users", c.sweep.gen.n_users),
        PPCT_FIELD(std::uint64_t, "gen", "n_ads", c.sweep.gen.n_ads),
        PPCT_FIELD(std::uint64_t, "gen", "n_target_apps", c.sweep.gen.n_target_apps),
        PPCT_FIELD(int, "gen", "dim_x", c.sweep.gen.dim_x),
        PPCT_FIELD(int, "gen", "dim_xp", c.sweep.gen.dim_xp),
        PPCT_FIELD(double, "gen", "impressions_per_user", c.sweep.gen.impressions_per_user),
        PPCT_FIELD(double, "gen", "horizon_h", c.sweep.gen.horizon_h),
        PPCT_FIELD(double, "gen", "ctr_base_logit", c.sweep.gen.ctr_base_logit),
        PPCT_FIELD(double, "gen", "ctr_feature_scale", c.sweep.gen.ctr_feature_scale),
        PPCT_FIELD(double, "gen", "cvr_base_logit", c.sweep.gen.cvr_base_logit),
        PPCT_FIELD(double, "gen", "cvr_feature_scale", c.sweep.gen.cvr_feature_scale),
        PPCT_FIELD(double, "gen", "platform_correlation", c.sweep.gen.platform_correlation),
        PPCT_FIELD(double, "gen", "xp_signal_strength", c.sweep.gen.xp_signal_strength),
        PPCT_FIELD(double, "gen", "ios_fraction", c.sweep.gen.ios_fraction),
        PPCT_FIELD(double, "gen", "ios_le13_fraction", c.sweep.gen.ios_le13_fraction),
        PPCT_FIELD(double, "gen", "behavior_shift", c.sweep.gen.behavior_shift),
        PPCT_FIELD(std::uint64_t, "gen", "world_seed", c.sweep.gen.world_seed),
        PPCT_FIELD(std::uint64_t, "gen", "seed", c.sweep.gen.seed),

        PPCT_FIELD(unsigned, "protocol", "bits", c.sweep.pipeline.protocol.bits),
        PPCT_FIELD(double, "protocol", "delay_min_h", c.sweep.pipeline.protocol.delay_min_h),
        PPCT_FIELD(double, "protocol", "delay_max_h", c.sweep.pipeline.protocol.delay_max_h),
        PPCT_FIELD(double, "protocol", "window_h", c.sweep.pipeline.protocol.window_h),
        PPCT_FIELD(unsigned, "protocol", "suppression_k", c.sweep.pipeline.protocol.suppression_k),
        {"protocol", "grouping",
         [](const RunConfig& c) { return std::string(grouping_name(c.sweep.pipeline.protocol.grouping)); },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           try {
             c.sweep.pipeline.protocol.grouping = parse_grouping(t);
           } catch (const ConfigError& e) {
             throw ConfigError(field, e.what());
           }
         }},
        PPCT_FIELD(double, "protocol", "count_noise_stddev", c.sweep.pipeline.protocol.count_noise_stddev),

        PPCT_FIELD(double, "train", "learning_rate", c.sweep.pipeline.train.learning_rate),
        PPCT_FIELD(int, "train", "batch_size", c.sweep.pipeline.train.batch_size),
        PPCT_FIELD(int, "train", "max_epochs", c.sweep.pipeline.train.max_epochs),
        {"train", "stopping",
         [](const RunConfig& c) {
           return std::string(std::holds_alternative<EarlyStopping>(c.sweep.pipeline.train.stopping) ? "early"
                                                                                                    : "fixed");
         },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           auto& rule = c.sweep.pipeline.train.stopping;
           if (t == "early") {
             if (!std::holds_alternative<EarlyStopping>(rule)) rule = EarlyStopping{};
           } else if (t == "fixed") {
             if (!std::holds_alternative<FixedEpochs>(rule)) rule = FixedEpochs{};
           } else {
             throw ConfigError(field, "expected early or fixed, got '" + t + "'");
           }
         }},
        {"train", "patience",
         [](const RunConfig& c) {
           const auto* e = std::get_if<EarlyStopping>(&c.sweep.pipeline.train.stopping);
           return std::to_string(e ? e->patience : EarlyStopping{}.patience);
         },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           if (auto* e = std::get_if<EarlyStopping>(&c.sweep.pipeline.train.stopping))
             e->patience = parse_value<int>(t, field);
           else
             parse_value<int>(t, field);
         }},
        {"train", "fixed_epochs",
         [](const RunConfig& c) {
           const auto* e = std::get_if<FixedEpochs>(&c.sweep.pipeline.train.stopping);
           return std::to_string(e ? e->epochs : FixedEpochs{}.epochs);
         },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           if (auto* e = std::get_if<FixedEpochs>(&c.sweep.pipeline.train.stopping))
             e->epochs = parse_value<int>(t, field);
           else
             parse_value<int>(t, field);
         }},
        PPCT_FIELD(double, "train", "validation_fraction", c.sweep.pipeline.train.validation_fraction),
        PPCT_FIELD(double, "train", "momentum", c.sweep.pipeline.train.momentum),
        PPCT_FIELD(double, "train", "soft_weight", c.sweep.pipeline.train.soft_weight),

        {"arch", "hidden",
         [](const RunConfig& c) {
           const auto& w = c.sweep.pipeline.arch.layer_widths;
           std::string s;
           for (std::size_t i = 1; i + 1 < w.size(); ++i) s += (i > 1 ? "," : "") + std::to_string(w[i]);
           return s;
         },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           auto& w = c.sweep.pipeline.arch.layer_widths;
           std::vector<int> widths{0};
           for (const auto& piece : split_list(t)) widths.push_back(parse_value<int>(piece, field));
           if (widths.size() < 2) throw ConfigError(field, "needs at least one hidden width");
           widths.push_back(1);
           w = std::move(widths);
         }},
        {"arch", "activation",
         [](const RunConfig& c) { return std::string(activation_name(c.sweep.pipeline.arch.activation)); },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           try {
             c.sweep.pipeline.arch.activation = parse_activation(t);
           } catch (const ConfigError& e) {
             throw ConfigError(field, e.what());
           }
         }},

        PPCT_FIELD(double, "imputer", "l2", c.sweep.pipeline.imputer.l2),
        {"imputer", "solver",
         [](const RunConfig& c) {
           return std::string(c.sweep.pipeline.imputer.solver == LrSolver::Newton ? "newton" : "gd");
         },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           if (t == "newton") {
             c.sweep.pipeline.imputer.solver = LrSolver::Newton;
           } else if (t == "gd") {
             c.sweep.pipeline.imputer.solver = LrSolver::GradientDescent;
           } else {
             throw ConfigError(field, "expected newton or gd, got '" + t + "'");
           }
         }},
        PPCT_FIELD(int, "imputer", "max_iterations", c.sweep.pipeline.imputer.max_iterations),
        PPCT_FIELD(double, "imputer", "gradient_tolerance", c.sweep.pipeline.imputer.gradient_tolerance),

        {"experiment", "settings",
         [](const RunConfig& c) {
           std::string s;
           for (const auto& e : c.sweep.settings) s += (s.empty() ? "" : ",") + std::string(setting_name(e.kind));
           return s;
         },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           c.sweep.settings.clear();
           for (const auto& piece : split_list(t)) {
             try {
               c.sweep.settings.push_back({parse_setting_kind(piece), 0.0, std::nullopt});
             } catch (const ConfigError& e) {
               throw ConfigError(field, e.what());
             }
           }
         }},
        {"experiment", "rates",
         [](const RunConfig& c) {
           std::string s;
           for (double r : c.sweep.rates) s += (s.empty() ? "" : ",") + format_double(r);
           return s;
         },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           c.sweep.rates.clear();
           for (const auto& piece : split_list(t)) c.sweep.rates.push_back(parse_value<double>(piece, field));
         }},
        PPCT_FIELD(int, "experiment", "n_seeds", c.sweep.n_seeds),
        {"experiment", "le13_fixed_epochs",
         [](const RunConfig& c) { return std::to_string(c.le13_fixed_epochs.value_or(0)); },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           const int v = parse_value<int>(t, field);
           if (v > 0) {
             c.le13_fixed_epochs = v;
           } else {
             c.le13_fixed_epochs.reset();
           }
         }},
        {"experiment", "calibration_level",
         [](const RunConfig& c) { return std::string(calibration_level_name(c.sweep.pipeline.calibration_level)); },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           try {
             c.sweep.pipeline.calibration_level = parse_calibration_level(t);
           } catch (const ConfigError& e) {
             throw ConfigError(field, e.what());
           }
         }},
        PPCT_FIELD(bool, "experiment", "calibrate", c.sweep.pipeline.calibrate),
        PPCT_FIELD(bool, "experiment", "use_mtl", c.sweep.pipeline.use_mtl),
        PPCT_FIELD(double, "experiment", "test_fraction", c.sweep.pipeline.test_fraction),
        PPCT_FIELD(int, "experiment", "ece_bins", c.sweep.pipeline.ece_bins),
        {"experiment", "setting",
         [](const RunConfig& c) { return std::string(setting_name(c.setting)); },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           try {
             c.setting = parse_setting_kind(t);
           } catch (const ConfigError& e) {
             throw ConfigError(field, e.what());
           }
         }},
        PPCT_FIELD(double, "experiment", "optin_rate", c.optin_rate),
        {"experiment", "output_dir", [](const RunConfig& c) { return c.output_dir.string(); },
         [](RunConfig& c, const std::string& t, const std::string& field) {
           if (t.empty()) throw ConfigError(field, "must not be empty");
           c.output_dir = t;
         }},
    };
    return f;
  }();
  return table;
}

#undef PPCT_FIELD

void sync_derived(RunConfig& c) {
  // The input width always follows the generator's feature dimension.
  auto& w = c.sweep.pipeline.arch.layer_widths;
  if (!w.empty()) w.front() = c.sweep.gen.dim_x;
  for (auto& s : c.sweep.settings) s.fixed_epochs_override = c.le13_fixed_epochs;
}

}  // namespace

RunConfig::RunConfig() {
  sweep.settings = {{SettingKind::NonPPCT, 0.0, std::nullopt},
                    {SettingKind::AndroidOnly, 0.0, std::nullopt},
                    {SettingKind::AndroidPlusIosLe13, 0.0, std::nullopt},
                    {SettingKind::OptInOnly, 0.0, std::nullopt},
                    {SettingKind::PostRankingSignals, 0.0, std::nullopt}};
  sweep.rates = {0.0, 0.2, 0.5, 0.8, 1.0};
}

void RunConfig::validate() const {
  // Baseline and seed-count checks belong to the sweep itself (optin_sweep).
  sweep.gen.validate();
  sweep.pipeline.validate();
  for (double r : sweep.rates)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("rates", "rates must lie in [0, 1]");
  if (!std::is_sorted(sweep.rates.begin(), sweep.rates.end()))
    throw ConfigError("rates", "rates must be sorted ascending");
  if (!(optin_rate >= 0.0 && optin_rate <= 1.0)) throw ConfigError("optin_rate", "must lie in [0, 1]");
  if (le13_fixed_epochs && *le13_fixed_epochs < 1) throw ConfigError("le13_fixed_epochs", "must be >= 1");
}

ExperimentSetting RunConfig::single_setting() const {
  ExperimentSetting s;
  s.kind = setting;
  s.optin_rate = optin_rate;
  s.fixed_epochs_override = le13_fixed_epochs;
  return s;
}

RunConfig parse_run_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config", "line " + std::to_string(e.line()) + ": " + e.message());
  }

  RunConfig config;
  // The stopping rule decides which of patience/fixed_epochs applies, so it goes first.
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& [section, body] : tree) {
      if (body.empty() && !body.data().empty())
        throw ConfigError(section, "key outside of any section");
      for (const auto& [key, node] : body) {
        if ((section == "train" && key == "stopping") != (pass == 0)) continue;
        const std::string field = section + "." + key;
        const auto& table = fields();
        auto it = std::find_if(table.begin(), table.end(),
                               [&](const Field& f) { return section == f.section && key == f.key; });
        if (it == table.end()) throw ConfigError(field, "unknown key");
        it->set(config, trim(node.data()), field);
      }
    }
  }
  sync_derived(config);
  config.validate();
  return config;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read config " + path.string());
  return parse_run_config(is);
}

std::string dump_run_config(const RunConfig& config) {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    if (section != f.section) {
      section = f.section;
      os << (os.tellp() > 0 ? "\n" : "") << '[' << section << "]\n";
    }
    os << f.key << " = " << f.get(config) << '\n';
  }
  return os.str();
}

std::string config_hash(const RunConfig& config) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : dump_run_config(config)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace ppct
