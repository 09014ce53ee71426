#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "ppct/config.hpp"
#include "ppct/csv_io.hpp"

using namespace ppct;
namespace fs = std::filesystem;

TEST(FormatDouble, ShortestRoundTrip) {
  Rng rng(1);
  std::normal_distribution<double> normal;
  for (int i = 0; i < 1000; ++i) {
    const double v = normal(rng) * std::pow(10.0, i % 40 - 20);
    EXPECT_EQ(std::stod(format_double(v)), v);
  }
  EXPECT_EQ(format_double(0.5), "0.5");
  EXPECT_EQ(format_double(3.0), "3");
}

TEST(LogsCsv, RoundTrip) {
  GenConfig g;
  g.n_users = 200;
  const auto logs = generate_logs(g);
  std::stringstream ss;
  write_logs_csv(ss, logs);
  const auto back = read_logs_csv(ss);
  ASSERT_EQ(back.size(), logs.size());
  for (std::size_t i = 0; i < logs.size(); ++i) {
    EXPECT_EQ(back[i].record_id, logs[i].record_id);
    EXPECT_EQ(back[i].platform, logs[i].platform);
    EXPECT_EQ(back[i].os_version, logs[i].os_version);
    EXPECT_EQ(back[i].clicked, logs[i].clicked);
    EXPECT_EQ(back[i].converted, logs[i].converted);
    EXPECT_EQ(back[i].x, logs[i].x);
    ASSERT_EQ(back[i].x_prime.has_value(), logs[i].x_prime.has_value());
    if (logs[i].x_prime) EXPECT_EQ(*back[i].x_prime, *logs[i].x_prime);
    EXPECT_FALSE(back[i].ad_id.has_value());
  }
}

TEST(LogsCsv, WithheldLabelsAreBlankAndUnreadable) {
  GenConfig g;
  g.n_users = 100;
  const auto logs = generate_logs(g);
  std::stringstream ss;
  write_partition_csv(ss, partition_labels(logs, SettingKind::AndroidOnly));
  std::string header;
  std::getline(ss, header);
  bool saw_blank = false;
  for (std::string line; std::getline(ss, line);)
    if (line.find("iOS") != std::string::npos) {
      EXPECT_NE(line.find(",1,,"), std::string::npos) << line;
      saw_blank = true;
    }
  EXPECT_TRUE(saw_blank);
  ss.clear();
  ss.seekg(0);
  EXPECT_THROW(read_logs_csv(ss), DataError);
}

TEST(LogsCsv, MalformedRowsNameTheLine) {
  std::stringstream ss("record_id,user_id,platform,os_version,target_app,opted_in,click_time,y,z,x_0\n"
                       "0,0,Android,11,0,0,3,1,0,0.5\n"
                       "1,0,Android,11,0,0,abc,1,0,0.5\n");
  try {
    read_logs_csv(ss);
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos);
  }
}

TEST(LrParams, RoundTrip) {
  LRParams p{Vector{{0.1, -2.5, 1e-300, 7.0}}, 1e-4};
  std::stringstream ss;
  write_lr_params(ss, p);
  const LRParams q = read_lr_params(ss);
  EXPECT_EQ(p.w, q.w);
  EXPECT_EQ(p.l2, q.l2);
}

TEST(AtomicWrite, FailureLeavesOnlyPartial) {
  const fs::path dir = fs::temp_directory_path() / "ppct_atomic_test";
  fs::remove_all(dir);
  fs::create_directories(dir);
  EXPECT_THROW(write_atomically(dir / "a.csv",
                                [](std::ostream& os) {
                                  os << "half";
                                  throw DataError("boom");
                                }),
               DataError);
  EXPECT_FALSE(fs::exists(dir / "a.csv"));
  EXPECT_TRUE(fs::exists(dir / "a.csv.partial"));
  write_atomically(dir / "a.csv", [](std::ostream& os) { os << "whole\n"; });
  EXPECT_TRUE(fs::exists(dir / "a.csv"));
  EXPECT_FALSE(fs::exists(dir / "a.csv.partial"));
  fs::remove_all(dir);
}

TEST(Manifest, RoundTrip) {
  const fs::path path = fs::temp_directory_path() / "ppct_manifest_test";
  write_manifest(path, {{"config_hash", "abc"}, {"rows", "12"}});
  const auto m = read_manifest(path);
  EXPECT_EQ(m.at("config_hash"), "abc");
  EXPECT_EQ(m.at("rows"), "12");
  fs::remove(path);
}

TEST(Config, DefaultsAndOverrides) {
  std::stringstream ss("[gen]\nn_users = 123\nseed = 9\n[train]\nstopping = fixed\nfixed_epochs = 7\n"
                       "[arch]\nhidden = 16, 8\nactivation = Tanh\n[experiment]\nrates = 0, 0.5\n"
                       "le13_fixed_epochs = 6\n");
  const RunConfig c = parse_run_config(ss);
  EXPECT_EQ(c.sweep.gen.n_users, 123u);
  EXPECT_EQ(c.sweep.gen.seed, 9u);
  EXPECT_EQ(c.sweep.gen.dim_x, GenConfig{}.dim_x);
  EXPECT_EQ(std::get<FixedEpochs>(c.sweep.pipeline.train.stopping).epochs, 7);
  EXPECT_EQ(c.sweep.pipeline.arch.layer_widths, (std::vector<int>{12, 16, 8, 1}));
  EXPECT_EQ(c.sweep.pipeline.arch.activation, Activation::Tanh);
  EXPECT_EQ(c.sweep.rates, (std::vector<double>{0.0, 0.5}));
  EXPECT_EQ(c.le13_fixed_epochs, 6);
  for (const auto& s : c.sweep.settings) EXPECT_EQ(s.fixed_epochs_override, 6);
}

TEST(Config, KeyOrderDoesNotMatterForStopping) {
  std::stringstream a("[train]\npatience = 9\nstopping = early\n");
  EXPECT_EQ(std::get<EarlyStopping>(parse_run_config(a).sweep.pipeline.train.stopping).patience, 9);
}

TEST(Config, ErrorsNameTheField) {
  auto field_of = [](const std::string& text) {
    std::stringstream ss(text);
    try {
      parse_run_config(ss);
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("<none>");
  };
  EXPECT_EQ(field_of("[gen]\nn_users = many\n"), "gen.n_users");
  EXPECT_EQ(field_of("[gen]\nflavour = 3\n"), "gen.flavour");
  EXPECT_EQ(field_of("[gen]\nios_fraction = 2\n"), "ios_fraction");
  EXPECT_EQ(field_of("[protocol]\ngrouping = Random\n"), "protocol.grouping");
  EXPECT_EQ(field_of("[experiment]\nrates = 0.5, 0.1\n"), "rates");
  EXPECT_EQ(field_of("[experiment]\nsettings = NonPPCT, Magic\n"), "experiment.settings");
  EXPECT_EQ(field_of("[train]\nstopping = sometimes\n"), "train.stopping");
  EXPECT_EQ(field_of("[gen]\nn_users = 10\n"), "<none>");
}

TEST(Config, DumpParsesBackToTheSameHash) {
  RunConfig c;
  c.sweep.gen.xp_signal_strength = 1.25;
  c.sweep.pipeline.protocol.grouping = GroupingPolicy::Cohort;
  c.output_dir = "elsewhere";
  std::stringstream ss(dump_run_config(c));
  const RunConfig back = parse_run_config(ss);
  EXPECT_EQ(config_hash(back), config_hash(c));
  EXPECT_EQ(dump_run_config(back), dump_run_config(c));
  RunConfig d = c;
  d.sweep.gen.seed += 1;
  EXPECT_NE(config_hash(d), config_hash(c));
  EXPECT_EQ(config_hash(c).size(), 16u);
}
