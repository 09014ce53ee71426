#include "ppct/csv_io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace ppct {
namespace {

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
}

template <typename T>
T parse_number(std::string_view field, std::size_t line_no, const char* column) {
  T v{};
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size())
    throw DataError("line " + std::to_string(line_no) + ": bad " + column + " '" +
                    std::string(field) + "'");
  return v;
}

void write_log_header(std::ostream& os, Eigen::Index dim_x, Eigen::Index dim_xp) {
  os << "record_id,user_id,platform,os_version,target_app,opted_in,click_time,y,z";
  for (Eigen::Index i = 0; i < dim_x; ++i) os << ",x_" << i;
  for (Eigen::Index i = 0; i < dim_xp; ++i) os << ",xp_" << i;
  os << '\n';
}

template <typename Record>
void write_log_row(std::ostream& os, const Record& r, bool clicked, const std::string& z,
                   Eigen::Index dim_xp) {
  os << r.record_id << ',' << r.user_id << ',' << platform_name(r.platform) << ','
     << r.os_version << ',' << r.target_app << ',' << (r.opted_in ? 1 : 0) << ','
     << format_double(r.click_time) << ',' << (clicked ? 1 : 0) << ',' << z;
  for (Eigen::Index i = 0; i < r.x.size(); ++i) os << ',' << format_double(r.x[i]);
  for (Eigen::Index i = 0; i < dim_xp; ++i) {
    os << ',';
    if (r.x_prime) os << format_double((*r.x_prime)[i]);
  }
  os << '\n';
}

Eigen::Index xp_width(std::span<const LogRecord> records) {
  for (const auto& r : records)
    if (r.x_prime) return r.x_prime->size();
  return 0;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

void write_logs_csv(std::ostream& os, std::span<const LogRecord> records) {
  const Eigen::Index dim_x = records.empty() ? 0 : records.front().x.size();
  const Eigen::Index dim_xp = xp_width(records);
  write_log_header(os, dim_x, dim_xp);
  for (const auto& r : records) write_log_row(os, r, r.clicked, r.converted ? "1" : "0", dim_xp);
}

void write_partition_csv(std::ostream& os, const LabeledPartition& partition) {
  Eigen::Index dim_x = 0;
  Eigen::Index dim_xp = 0;
  if (!partition.hard.empty()) {
    dim_x = partition.hard.front().x.size();
    dim_xp = xp_width(partition.hard);
  } else if (!partition.unlabeled.empty()) {
    dim_x = partition.unlabeled.front().x.size();
    dim_xp = partition.unlabeled.front().x_prime ? partition.unlabeled.front().x_prime->size() : 0;
  }
  write_log_header(os, dim_x, dim_xp);
  for (const auto& r : partition.hard) write_log_row(os, r, true, r.converted ? "1" : "0", dim_xp);
  for (const auto& r : partition.unlabeled) write_log_row(os, r, true, "", dim_xp);
}

std::vector<LogRecord> read_logs_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("log file is empty");
  const auto header = split_commas(line);
  if (header.size() < 9 || header[0] != "record_id" || header[8] != "z")
    throw DataError("log file: unexpected header");
  Eigen::Index dim_x = 0;
  Eigen::Index dim_xp = 0;
  for (std::size_t i = 9; i < header.size(); ++i) {
    if (header[i].starts_with("xp_")) {
      ++dim_xp;
    } else if (header[i].starts_with("x_")) {
      ++dim_x;
    } else {
      throw DataError("log file: unexpected column '" + std::string(header[i]) + "'");
    }
  }

  std::vector<LogRecord> out;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_commas(line);
    if (f.size() != header.size())
      throw DataError("line " + std::to_string(line_no) + ": expected " +
                      std::to_string(header.size()) + " fields, got " + std::to_string(f.size()));
    LogRecord r;
    r.record_id = parse_number<std::uint64_t>(f[0], line_no, "record_id");
    r.user_id = parse_number<std::uint64_t>(f[1], line_no, "user_id");
    r.platform = parse_platform(f[2]);
    r.os_version = parse_number<int>(f[3], line_no, "os_version");
    r.target_app = parse_number<std::uint64_t>(f[4], line_no, "target_app");
    r.opted_in = parse_number<int>(f[5], line_no, "opted_in") != 0;
    r.click_time = parse_number<double>(f[6], line_no, "click_time");
    r.clicked = parse_number<int>(f[7], line_no, "y") != 0;
    if (f[8].empty())
      throw DataError("line " + std::to_string(line_no) + ": conversion label withheld");
    r.converted = parse_number<int>(f[8], line_no, "z") != 0;
    r.z_true_prob = std::numeric_limits<double>::quiet_NaN();
    r.x.resize(dim_x);
    for (Eigen::Index i = 0; i < dim_x; ++i)
      r.x[i] = parse_number<double>(f[9 + static_cast<std::size_t>(i)], line_no, "x");
    const std::size_t xp0 = 9 + static_cast<std::size_t>(dim_x);
    if (dim_xp > 0 && !f[xp0].empty()) {
      Vector xp(dim_xp);
      for (Eigen::Index i = 0; i < dim_xp; ++i)
        xp[i] = parse_number<double>(f[xp0 + static_cast<std::size_t>(i)], line_no, "xp");
      r.x_prime = std::move(xp);
    }
    if (!r.clicked && r.converted)
      throw DataError("line " + std::to_string(line_no) + ": z=1 on an unclicked row");
    out.push_back(std::move(r));
  }
  return out;
}

void write_callbacks_csv(std::ostream& os, std::span<const ConversionCallback> callbacks) {
  os << "target_app,token,report_time\n";
  for (const auto& c : callbacks)
    os << c.target_app << ',' << c.token.value() << ',' << format_double(c.report_time) << '\n';
}

void write_groups_csv(std::ostream& os, std::span<const GroupLabel> groups) {
  os << "target_app,token,window_start,window_end,click_count,conversions,suppressed\n";
  for (const auto& g : groups)
    os << g.target_app << ',' << g.token.value() << ',' << format_double(g.window_start) << ','
       << format_double(g.window_end) << ',' << g.click_count << ',' << g.conversions << ','
       << (g.suppressed ? 1 : 0) << '\n';
}

void write_soft_labels_csv(std::ostream& os, std::span<const SoftLabel> labels) {
  os << "record_id,z_hat,calibrated\n";
  for (const auto& l : labels)
    os << l.record_id << ',' << format_double(l.z_hat) << ',' << (l.calibrated ? 1 : 0) << '\n';
}

void write_trace_csv(std::ostream& os, const TrainingTrace& trace) {
  os << "epoch,train_loss,val_pr_auc\n";
  for (const auto& e : trace.epochs) {
    os << e.epoch << ',' << format_double(e.train_loss) << ',';
    if (!std::isnan(e.val_pr_auc)) os << format_double(e.val_pr_auc);
    os << '\n';
  }
}

void write_lr_params(std::ostream& os, const LRParams& params) {
  os << "dim " << params.w.size() - 1 << " l2 " << format_double(params.l2) << '\n';
  for (Eigen::Index i = 0; i < params.w.size(); ++i) os << format_double(params.w[i]) << '\n';
}

LRParams read_lr_params(std::istream& is) {
  std::string tag_dim;
  std::string tag_l2;
  Eigen::Index dim = 0;
  std::string l2_text;
  if (!(is >> tag_dim >> dim >> tag_l2 >> l2_text) || tag_dim != "dim" || tag_l2 != "l2" || dim < 0)
    throw DataError("LR params: malformed header");
  LRParams p;
  p.l2 = parse_number<double>(l2_text, 1, "l2");
  p.w.resize(dim + 1);
  for (Eigen::Index i = 0; i <= dim; ++i) {
    std::string v;
    if (!(is >> v)) throw DataError("LR params: truncated");
    p.w[i] = parse_number<double>(v, static_cast<std::size_t>(i) + 2, "weight");
  }
  return p;
}

void write_cells_header(std::ostream& os) {
  os << "setting,optin_rate,seed,pr_auc,calibration_error\n";
}

void write_cell_row(std::ostream& os, const SeedResult& c) {
  os << setting_name(c.setting.kind) << ',' << format_double(c.setting.optin_rate) << ',' << c.seed
     << ',' << format_double(c.pr_auc) << ',' << format_double(c.calibration_error) << '\n';
}

void write_cells_csv(std::ostream& os, std::span<const SeedResult> cells) {
  write_cells_header(os);
  for (const auto& c : cells) write_cell_row(os, c);
}

void write_aggregated_csv(std::ostream& os, std::span<const MetricsReport> reports) {
  os << "setting,optin_rate,pr_auc_mean,pr_auc_se,relative_pr_auc,n_seeds\n";
  for (const auto& r : reports)
    os << setting_name(r.setting.kind) << ',' << format_double(r.setting.optin_rate) << ','
       << format_double(r.pr_auc) << ',' << format_double(r.pr_auc_se) << ','
       << format_double(r.relative_pr_auc) << ',' << r.n_seeds << '\n';
}

void write_summary(std::ostream& os, std::span<const MetricsReport> reports) {
  os << std::left << std::setw(20) << "setting" << std::right << std::setw(8) << "opt-in"
     << std::setw(10) << "PR-AUC" << std::setw(9) << "SE" << std::setw(10) << "relative"
     << std::setw(9) << "ECE" << std::setw(7) << "seeds" << '\n';
  os << std::fixed;
  for (const auto& r : reports) {
    os << std::left << std::setw(20) << setting_name(r.setting.kind) << std::right
       << std::setprecision(2) << std::setw(8) << r.setting.optin_rate << std::setprecision(4)
       << std::setw(10) << r.pr_auc << std::setw(9) << r.pr_auc_se << std::setprecision(3)
       << std::setw(10) << r.relative_pr_auc << std::setprecision(4) << std::setw(9)
       << r.calibration_error << std::setw(7) << r.n_seeds << '\n';
  }
  os << std::defaultfloat;
}

void write_manifest(const std::filesystem::path& path,
                    const std::map<std::string, std::string>& entries) {
  write_atomically(path, [&](std::ostream& os) {
    for (const auto& [k, v] : entries) os << k << '=' << v << '\n';
  });
}

std::map<std::string, std::string> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot read manifest " + path.string());
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

void write_atomically(const std::filesystem::path& path,
                      const std::function<void(std::ostream&)>& writer) {
  std::filesystem::path partial = path;
  partial += ".partial";
  {
    std::ofstream os(partial, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + partial.string());
    writer(os);
    os.flush();
    if (!os) throw Error("failed writing " + partial.string());
  }
  std::filesystem::rename(partial, path);
}

}  // namespace ppct
