#include "ctta/metrics_report.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ctta {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

double parse_number(const std::string& s, const std::string& what) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw DataError("cannot parse " + what + " value '" + s + "'");
  }
}

std::string fixed1(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  f << text;
  if (!f) throw IoError("write failed for " + path.string());
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// Minimal raster canvas for the sweep plot.
class Canvas {
 public:
  Canvas(int w, int h) : w_(w), h_(h), px_(static_cast<std::size_t>(w * h * 3), 255) {}

  void set(int x, int y, std::array<std::uint8_t, 3> c) {
    if (x < 0 || y < 0 || x >= w_ || y >= h_) return;
    auto* p = &px_[static_cast<std::size_t>((y * w_ + x) * 3)];
    p[0] = c[0], p[1] = c[1], p[2] = c[2];
  }

  void rect(int x0, int y0, int x1, int y1, std::array<std::uint8_t, 3> c) {
    for (int y = std::min(y0, y1); y <= std::max(y0, y1); ++y)
      for (int x = std::min(x0, x1); x <= std::max(x0, x1); ++x) set(x, y, c);
  }

  void line(double x0, double y0, double x1, double y1, int thickness, std::array<std::uint8_t, 3> c) {
    const int steps = static_cast<int>(std::ceil(std::max(std::abs(x1 - x0), std::abs(y1 - y0)))) + 1;
    for (int i = 0; i <= steps; ++i) {
      const double t = static_cast<double>(i) / steps;
      const int x = static_cast<int>(std::lround(x0 + t * (x1 - x0)));
      const int y = static_cast<int>(std::lround(y0 + t * (y1 - y0)));
      rect(x - thickness / 2, y - thickness / 2, x + (thickness - 1) / 2, y + (thickness - 1) / 2, c);
    }
  }

  // 5x7 bitmap glyphs, scaled.
  void text(int x, int y, const std::string& s, int scale, std::array<std::uint8_t, 3> c) {
    for (char ch : s) {
      const auto& g = glyph(ch);
      for (int r = 0; r < 7; ++r)
        for (int col = 0; col < 5; ++col)
          if (g[r] & (0x10 >> col)) rect(x + col * scale, y + r * scale, x + (col + 1) * scale - 1, y + (r + 1) * scale - 1, c);
      x += 6 * scale;
    }
  }

  static int text_width(const std::string& s, int scale) { return static_cast<int>(s.size()) * 6 * scale; }

  void save(const std::filesystem::path& path) const {
    FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot write " + path.string());
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info || setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      std::fclose(f);
      throw IoError("png encoding failed for " + path.string());
    }
    png_init_io(png, f);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w_), static_cast<png_uint_32>(h_), 8, PNG_COLOR_TYPE_RGB,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h_; ++y)
      png_write_row(png, const_cast<png_bytep>(&px_[static_cast<std::size_t>(y * w_ * 3)]));
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(f);
  }

 private:
  static const std::array<std::uint8_t, 7>& glyph(char ch) {
    static const std::map<char, std::array<std::uint8_t, 7>> font = {
        {'0', {0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E}}, {'1', {0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'2', {0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F}}, {'3', {0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E}},
        {'4', {0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02}}, {'5', {0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E}},
        {'6', {0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E}}, {'7', {0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08}},
        {'8', {0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E}}, {'9', {0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C}},
        {'.', {0, 0, 0, 0, 0, 0x0C, 0x0C}},                 {'-', {0, 0, 0, 0x1F, 0, 0, 0}},
        {'_', {0, 0, 0, 0, 0, 0, 0x1F}},                     {'%', {0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03}},
        {'(', {0x02, 0x04, 0x08, 0x08, 0x08, 0x04, 0x02}},   {')', {0x08, 0x04, 0x02, 0x02, 0x02, 0x04, 0x08}},
        {'a', {0, 0, 0x0E, 0x01, 0x0F, 0x11, 0x0F}},         {'b', {0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E}},
        {'c', {0, 0, 0x0E, 0x10, 0x10, 0x11, 0x0E}},         {'d', {0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F}},
        {'e', {0, 0, 0x0E, 0x11, 0x1F, 0x10, 0x0E}},         {'l', {0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E}},
        {'m', {0, 0, 0x1A, 0x15, 0x15, 0x11, 0x11}},         {'n', {0, 0, 0x16, 0x19, 0x11, 0x11, 0x11}},
        {'o', {0, 0, 0x0E, 0x11, 0x11, 0x11, 0x0E}},         {'r', {0, 0, 0x16, 0x19, 0x10, 0x10, 0x10}},
        {'s', {0, 0, 0x0E, 0x10, 0x0E, 0x01, 0x1E}},
    };
    static const std::array<std::uint8_t, 7> blank{};
    auto it = font.find(ch);
    return it == font.end() ? blank : it->second;
  }

  int w_, h_;
  std::vector<std::uint8_t> px_;
};

}  // namespace

double error_rate(const std::vector<int>& predictions, const std::vector<int>& labels) {
  if (predictions.size() != labels.size()) {
    throw DataError("error_rate: " + std::to_string(predictions.size()) + " predictions for " +
                    std::to_string(labels.size()) + " labels");
  }
  if (labels.empty()) throw DataError("error_rate: no samples");
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) wrong += predictions[i] != labels[i];
  return 100.0 * static_cast<double>(wrong) / static_cast<double>(labels.size());
}

const std::vector<std::string>& table_columns() {
  static const std::vector<std::string> c = {"gaussian", "shot",  "impulse",    "defocus",  "glass",
                                             "motion",   "zoom",  "snow",       "frost",    "fog",
                                             "brightness", "contrast", "elastic", "pixelate", "jpeg"};
  return c;
}

const SummaryRow& SummaryTable::row(const std::string& method) const {
  for (const auto& r : rows)
    if (r.method == method) return r;
  throw DataError("no row for method '" + method + "'");
}

std::string SummaryTable::to_csv() const {
  std::ostringstream out;
  out << "method";
  for (const auto& c : columns) out << ',' << c;
  out << ",mean\n";
  for (const auto& r : rows) {
    if (r.method.find(',') != std::string::npos) throw DataError("method label contains a comma: " + r.method);
    out << r.method;
    for (double e : r.errors) out << ',' << fixed1(e);
    out << ',' << fixed1(r.mean) << '\n';
  }
  return out.str();
}

SummaryTable SummaryTable::parse_csv(const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty()) throw DataError("empty summary table");
  const auto header = split(lines[0], ',');
  if (header.size() < 2 || header.front() != "method" || header.back() != "mean") {
    throw DataError("summary header must start with 'method' and end with 'mean'");
  }
  SummaryTable t;
  t.columns.assign(header.begin() + 1, header.end() - 1);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i], ',');
    if (cells.size() != header.size()) throw DataError("summary row " + std::to_string(i) + " has wrong width");
    SummaryRow r;
    r.method = cells[0];
    for (std::size_t k = 1; k + 1 < cells.size(); ++k) r.errors.push_back(parse_number(cells[k], header[k]));
    r.mean = parse_number(cells.back(), "mean");
    t.rows.push_back(std::move(r));
  }
  return t;
}

void SummaryTable::write(const std::filesystem::path& path) const { write_text(path, to_csv()); }

SummaryTable SummaryTable::read(const std::filesystem::path& path) { return parse_csv(read_text(path)); }

SummaryTable emit_table(const std::vector<OnlineResult>& results) {
  if (results.empty()) throw DataError("emit_table: no results");
  const auto& ref = results.front().domains;
  for (const auto& r : results) {
    if (r.domains != ref) throw DataError("emit_table: result '" + r.method + "' covers a different domain sequence");
    if (r.domain_error.size() != r.domains.size()) throw DataError("emit_table: result '" + r.method + "' incomplete");
  }
  // Columns follow table order regardless of the stream order.
  std::map<std::string, std::size_t> by_column;
  for (std::size_t d = 0; d < ref.size(); ++d) {
    const auto col = column_name(ref[d]);
    if (!by_column.emplace(col, d).second) throw DataError("emit_table: column '" + col + "' appears twice");
  }
  SummaryTable t;
  for (const auto& c : table_columns())
    if (by_column.count(c)) t.columns.push_back(c);
  for (const auto& r : results) {
    SummaryRow row;
    row.method = r.method;
    for (const auto& c : t.columns) row.errors.push_back(r.domain_error[by_column.at(c)]);
    row.mean = mean_of(row.errors);
    t.rows.push_back(std::move(row));
  }
  return t;
}

SummaryRow average_rows(const std::vector<SummaryRow>& rows, const std::string& method) {
  if (rows.empty()) throw DataError("average_rows: no rows");
  SummaryRow out;
  out.method = method;
  out.errors.assign(rows.front().errors.size(), 0.0);
  for (const auto& r : rows) {
    if (r.errors.size() != out.errors.size()) throw DataError("average_rows: rows differ in width");
    for (std::size_t k = 0; k < r.errors.size(); ++k) out.errors[k] += r.errors[k];
  }
  for (auto& e : out.errors) e /= static_cast<double>(rows.size());
  out.mean = mean_of(out.errors);
  return out;
}

const std::vector<std::string>& ablation_labels() {
  static const std::vector<std::string> l = {"source", "+fdc", "+fdc+cdm", "+fdc+scl", "full"};
  return l;
}

double SweepResult::swept_value(const SweepPoint& p) const {
  if (param == "lambda_cdm") return p.lambda_cdm;
  if (param == "lambda_scl") return p.lambda_scl;
  throw ConfigError("sweep parameter must be lambda_cdm or lambda_scl, got '" + param + "'");
}

double SweepResult::spread() const {
  if (points.size() < 2) return 0.0;
  auto [lo, hi] = std::minmax_element(points.begin(), points.end(),
                                      [](const auto& a, const auto& b) { return a.mean_error < b.mean_error; });
  return hi->mean_error - lo->mean_error;
}

std::string SweepResult::to_csv() const {
  std::ostringstream out;
  out << "lambda_cdm,lambda_scl,mean_error\n";
  char buf[128];
  for (const auto& p : points) {
    std::snprintf(buf, sizeof buf, "%.4g,%.4g,%.3f\n", p.lambda_cdm, p.lambda_scl, p.mean_error);
    out << buf;
  }
  return out.str();
}

SweepResult SweepResult::parse_csv(const std::string& param, const std::string& text) {
  const auto lines = lines_of(text);
  if (lines.empty() || lines[0] != "lambda_cdm,lambda_scl,mean_error") throw DataError("bad sweep csv header");
  SweepResult s;
  s.param = param;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cells = split(lines[i], ',');
    if (cells.size() != 3) throw DataError("sweep row " + std::to_string(i) + " has wrong width");
    s.points.push_back({parse_number(cells[0], "lambda_cdm"), parse_number(cells[1], "lambda_scl"),
                        parse_number(cells[2], "mean_error")});
  }
  return s;
}

std::vector<double> default_sweep_grid() { return {0.4, 0.6, 0.8, 1.0, 1.2, 1.4, 1.6}; }

void write_sweep_plot(const std::filesystem::path& path, const SweepResult& sweep) {
  constexpr int W = 640, H = 420, L = 90, R = 24, T = 40, B = 60;
  const std::array<std::uint8_t, 3> black{0, 0, 0}, grey{200, 200, 200}, blue{31, 90, 180};
  Canvas c(W, H);
  std::vector<double> xs, ys;
  for (const auto& p : sweep.points) {
    xs.push_back(sweep.swept_value(p));
    ys.push_back(p.mean_error);
  }
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  if (!xs.empty()) {
    x0 = *std::min_element(xs.begin(), xs.end());
    x1 = *std::max_element(xs.begin(), xs.end());
    y0 = *std::min_element(ys.begin(), ys.end());
    y1 = *std::max_element(ys.begin(), ys.end());
  }
  if (x1 - x0 < 1e-9) x0 -= 0.1, x1 += 0.1;
  const double pad = std::max(0.5, 0.15 * (y1 - y0));
  y0 -= pad, y1 += pad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

  for (int i = 0; i <= 4; ++i) {
    const double v = y0 + (y1 - y0) * i / 4.0;
    const int y = static_cast<int>(std::lround(py(v)));
    c.line(L, y, W - R, y, 1, grey);
    const auto label = fixed1(v);
    c.text(L - 8 - Canvas::text_width(label, 2), y - 7, label, 2, black);
  }
  for (double x : xs) {
    const int xx = static_cast<int>(std::lround(px(x)));
    c.line(xx, H - B, xx, H - B + 6, 1, black);
    const auto label = fixed1(x);
    c.text(xx - Canvas::text_width(label, 2) / 2, H - B + 12, label, 2, black);
  }
  c.line(L, T, L, H - B, 2, black);
  c.line(L, H - B, W - R, H - B, 2, black);
  for (std::size_t i = 1; i < xs.size(); ++i) c.line(px(xs[i - 1]), py(ys[i - 1]), px(xs[i]), py(ys[i]), 3, blue);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const int x = static_cast<int>(std::lround(px(xs[i]))), y = static_cast<int>(std::lround(py(ys[i])));
    c.rect(x - 4, y - 4, x + 4, y + 4, blue);
  }
  c.text((W - Canvas::text_width(sweep.param, 2)) / 2, H - 22, sweep.param, 2, black);
  c.text(8, 10, "mean error (%)", 2, black);
  c.save(path);
}

}  // namespace ctta
