#include "kmine/plot.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "kmine/errors.hpp"

namespace kmine::harness {

namespace {

// ---- minimal PNG writer: truecolor, zlib stored blocks ----

std::uint32_t crc32(const unsigned char* data, std::size_t n, std::uint32_t crc = 0) {
  static std::array<std::uint32_t, 256> table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  crc ^= 0xFFFFFFFFu;
  for (std::size_t i = 0; i < n; ++i) crc = table[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
  return crc ^ 0xFFFFFFFFu;
}

std::uint32_t adler32(const unsigned char* data, std::size_t n) {
  std::uint32_t a = 1, b = 0;
  for (std::size_t i = 0; i < n; ++i) {
    a = (a + data[i]) % 65521u;
    b = (b + a) % 65521u;
  }
  return (b << 16) | a;
}

void put_u32be(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xFF));
  s.push_back(static_cast<char>((v >> 16) & 0xFF));
  s.push_back(static_cast<char>((v >> 8) & 0xFF));
  s.push_back(static_cast<char>(v & 0xFF));
}

void append_chunk(std::string& out, const char type[4], const std::string& data) {
  put_u32be(out, static_cast<std::uint32_t>(data.size()));
  std::string body(type, 4);
  body += data;
  out += body;
  put_u32be(out, crc32(reinterpret_cast<const unsigned char*>(body.data()), body.size()));
}

std::string encode_png(int w, int h, const std::vector<unsigned char>& rgb) {
  std::string raw;
  raw.reserve(static_cast<std::size_t>(h) * (1 + 3 * w));
  for (int y = 0; y < h; ++y) {
    raw.push_back('\0');  // filter: none
    raw.append(reinterpret_cast<const char*>(rgb.data()) + static_cast<std::size_t>(y) * 3 * w,
               static_cast<std::size_t>(3) * w);
  }
  std::string z;
  z.push_back(0x78);
  z.push_back(0x01);
  std::size_t pos = 0;
  while (pos < raw.size()) {
    const std::size_t len = std::min<std::size_t>(65535, raw.size() - pos);
    const bool last = pos + len == raw.size();
    z.push_back(last ? 1 : 0);
    z.push_back(static_cast<char>(len & 0xFF));
    z.push_back(static_cast<char>((len >> 8) & 0xFF));
    z.push_back(static_cast<char>(~len & 0xFF));
    z.push_back(static_cast<char>((~len >> 8) & 0xFF));
    z.append(raw, pos, len);
    pos += len;
  }
  put_u32be(z, adler32(reinterpret_cast<const unsigned char*>(raw.data()), raw.size()));

  std::string png("\x89PNG\r\n\x1a\n", 8);
  std::string ihdr;
  put_u32be(ihdr, static_cast<std::uint32_t>(w));
  put_u32be(ihdr, static_cast<std::uint32_t>(h));
  ihdr.push_back(8);   // bit depth
  ihdr.push_back(2);   // truecolor
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  append_chunk(png, "IHDR", ihdr);
  append_chunk(png, "IDAT", z);
  append_chunk(png, "IEND", "");
  return png;
}

// ---- tiny raster canvas with a 3x5 uppercase font ----

struct Color {
  unsigned char r, g, b;
};

const Color kPalette[] = {{31, 119, 180}, {255, 127, 14}, {44, 160, 44},
                          {214, 39, 40},  {148, 103, 189}, {140, 86, 75}};

struct Canvas {
  int w, h;
  std::vector<unsigned char> px;
  Canvas(int w_, int h_) : w(w_), h(h_), px(static_cast<std::size_t>(w_) * h_ * 3, 255) {}

  void set(int x, int y, Color c) {
    if (x < 0 || y < 0 || x >= w || y >= h) return;
    std::size_t i = (static_cast<std::size_t>(y) * w + x) * 3;
    px[i] = c.r;
    px[i + 1] = c.g;
    px[i + 2] = c.b;
  }
  void rect(int x0, int y0, int x1, int y1, Color c) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) set(x, y, c);
  }
  void line(int x0, int y0, int x1, int y1, Color c, int thick = 1) {
    int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
    int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
    int err = dx + dy;
    while (true) {
      for (int oy = 0; oy < thick; ++oy)
        for (int ox = 0; ox < thick; ++ox) set(x0 + ox, y0 + oy, c);
      if (x0 == x1 && y0 == y1) break;
      int e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  void text(int x, int y, const std::string& s, Color c, int scale = 2);
};

const std::array<unsigned char, 5>* glyph(char ch) {
  static const std::map<char, std::array<unsigned char, 5>> font = {
      {'0', {7, 5, 5, 5, 7}}, {'1', {2, 6, 2, 2, 7}}, {'2', {7, 1, 7, 4, 7}},
      {'3', {7, 1, 7, 1, 7}}, {'4', {5, 5, 7, 1, 1}}, {'5', {7, 4, 7, 1, 7}},
      {'6', {7, 4, 7, 5, 7}}, {'7', {7, 1, 1, 1, 1}}, {'8', {7, 5, 7, 5, 7}},
      {'9', {7, 5, 7, 1, 7}}, {'A', {7, 5, 7, 5, 5}}, {'B', {6, 5, 6, 5, 6}},
      {'C', {7, 4, 4, 4, 7}}, {'D', {6, 5, 5, 5, 6}}, {'E', {7, 4, 7, 4, 7}},
      {'F', {7, 4, 7, 4, 4}}, {'G', {7, 4, 5, 5, 7}}, {'H', {5, 5, 7, 5, 5}},
      {'I', {7, 2, 2, 2, 7}}, {'J', {1, 1, 1, 5, 7}}, {'K', {5, 6, 4, 6, 5}},
      {'L', {4, 4, 4, 4, 7}}, {'M', {5, 7, 7, 5, 5}}, {'N', {6, 5, 5, 5, 5}},
      {'O', {7, 5, 5, 5, 7}}, {'P', {7, 5, 7, 4, 4}}, {'Q', {7, 5, 5, 7, 1}},
      {'R', {7, 5, 6, 5, 5}}, {'S', {7, 4, 7, 1, 7}}, {'T', {7, 2, 2, 2, 2}},
      {'U', {5, 5, 5, 5, 7}}, {'V', {5, 5, 5, 5, 2}}, {'W', {5, 5, 7, 7, 5}},
      {'X', {5, 5, 2, 5, 5}}, {'Y', {5, 5, 2, 2, 2}}, {'Z', {7, 1, 2, 4, 7}},
      {'.', {0, 0, 0, 0, 2}}, {'-', {0, 0, 7, 0, 0}}, {'_', {0, 0, 0, 0, 7}},
      {'=', {0, 7, 0, 7, 0}}, {' ', {0, 0, 0, 0, 0}}};
  auto it = font.find(ch);
  return it == font.end() ? nullptr : &it->second;
}

void Canvas::text(int x, int y, const std::string& s, Color c, int scale) {
  int cx = x;
  for (char raw : s) {
    char ch = static_cast<char>(std::toupper(static_cast<unsigned char>(raw)));
    const auto* gl = glyph(ch);
    if (gl != nullptr) {
      for (int r = 0; r < 5; ++r)
        for (int col = 0; col < 3; ++col)
          if ((*gl)[static_cast<std::size_t>(r)] & (4 >> col))
            rect(cx + col * scale, y + r * scale, cx + col * scale + scale - 1,
                 y + r * scale + scale - 1, c);
    }
    cx += 4 * scale;
  }
}

std::string fmt_tick(double v) {
  std::ostringstream os;
  os << std::setprecision(4) << v;
  return os.str();
}

std::string sanitize_label(const std::string& s) {
  std::string out;
  for (char c : s)
    out.push_back(c == ',' || c == '\n' || c == '\r' ? '_' : c);
  return out;
}

void render_png(const std::vector<LocTrace>& traces, const std::vector<std::string>& labels,
                const std::string& path) {
  const int W = 880, H = 520, L = 70, R = 180, T = 30, B = 50;
  const int pw = W - L - R, ph = H - T - B;
  Canvas cv(W, H);

  int min_step = traces[0].entries.front().first;
  int max_step = traces[0].entries.back().first;
  for (const auto& t : traces) {
    min_step = std::min(min_step, t.entries.front().first);
    max_step = std::max(max_step, t.entries.back().first);
  }
  if (max_step == min_step) max_step = min_step + 1;

  auto xpix = [&](double s) {
    return L + static_cast<int>(std::lround((s - min_step) / (max_step - min_step) * pw));
  };
  auto ypix = [&](double v) { return T + static_cast<int>(std::lround((1.0 - v) * ph)); };

  const Color grid{220, 220, 220}, axis{60, 60, 60}, ink{30, 30, 30};
  for (int i = 0; i <= 4; ++i) {
    const double v = 0.25 * i;
    cv.line(L, ypix(v), L + pw, ypix(v), grid);
    cv.text(8, ypix(v) - 5, fmt_tick(v), ink);
  }
  for (int i = 0; i <= 4; ++i) {
    const double s = min_step + (max_step - min_step) * (i / 4.0);
    cv.line(xpix(s), T, xpix(s), T + ph, grid);
    cv.text(xpix(s) - 10, T + ph + 10, fmt_tick(std::round(s)), ink);
  }
  cv.line(L, T, L, T + ph, axis);
  cv.line(L, T + ph, L + pw, T + ph, axis);
  cv.text(L + pw / 2 - 20, H - 18, "STEP", ink);
  cv.text(8, 10, "MEAN LOC", ink);

  for (std::size_t i = 0; i < traces.size(); ++i) {
    const Color c = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    const auto& e = traces[i].entries;
    for (std::size_t j = 1; j < e.size(); ++j)
      cv.line(xpix(e[j - 1].first), ypix(e[j - 1].second), xpix(e[j].first),
              ypix(e[j].second), c, 2);
    const int ly = T + 14 * static_cast<int>(i);
    cv.line(L + pw + 12, ly + 4, L + pw + 34, ly + 4, c, 3);
    cv.text(L + pw + 40, ly, labels[i].substr(0, 16), ink);
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot write plot: " + path);
  const std::string png = encode_png(W, H, cv.px);
  os.write(png.data(), static_cast<std::streamsize>(png.size()));
}

void render_svg(const std::vector<LocTrace>& traces, const std::vector<std::string>& labels,
                const std::string& path) {
  const int W = 880, H = 520, L = 70, R = 180, T = 30, B = 50;
  const int pw = W - L - R, ph = H - T - B;
  int min_step = traces[0].entries.front().first;
  int max_step = traces[0].entries.back().first;
  for (const auto& t : traces) {
    min_step = std::min(min_step, t.entries.front().first);
    max_step = std::max(max_step, t.entries.back().first);
  }
  if (max_step == min_step) max_step = min_step + 1;
  auto xpix = [&](double s) { return L + (s - min_step) / (max_step - min_step) * pw; };
  auto ypix = [&](double v) { return T + (1.0 - v) * ph; };

  std::ostringstream os;
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n"
     << "<rect width='100%' height='100%' fill='white'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = 0.25 * i;
    os << "<line x1='" << L << "' y1='" << ypix(v) << "' x2='" << L + pw << "' y2='" << ypix(v)
       << "' stroke='#dcdcdc'/>\n"
       << "<text x='8' y='" << ypix(v) + 4 << "' font-size='12'>" << fmt_tick(v) << "</text>\n";
  }
  os << "<line x1='" << L << "' y1='" << T << "' x2='" << L << "' y2='" << T + ph
     << "' stroke='#3c3c3c'/>\n"
     << "<line x1='" << L << "' y1='" << T + ph << "' x2='" << L + pw << "' y2='" << T + ph
     << "' stroke='#3c3c3c'/>\n"
     << "<text x='" << L + pw / 2 - 15 << "' y='" << H - 14 << "' font-size='12'>step</text>\n"
     << "<text x='8' y='16' font-size='12'>mean_loc</text>\n";
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const Color c = kPalette[i % (sizeof(kPalette) / sizeof(kPalette[0]))];
    os << "<polyline fill='none' stroke='rgb(" << int(c.r) << ',' << int(c.g) << ',' << int(c.b)
       << ")' stroke-width='2' points='";
    for (const auto& [s, v] : traces[i].entries) os << xpix(s) << ',' << ypix(v) << ' ';
    os << "'/>\n";
    const int ly = T + 18 * static_cast<int>(i);
    os << "<line x1='" << L + pw + 12 << "' y1='" << ly << "' x2='" << L + pw + 34 << "' y2='"
       << ly << "' stroke='rgb(" << int(c.r) << ',' << int(c.g) << ',' << int(c.b)
       << ")' stroke-width='3'/>\n"
       << "<text x='" << L + pw + 40 << "' y='" << ly + 4 << "' font-size='12'>"
       << sanitize_label(labels[i]) << "</text>\n";
  }
  os << "</svg>\n";
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw Error("cannot write plot: " + path);
  f << os.str();
}

std::string swap_ext(const std::string& path, const std::string& ext) {
  auto slash = path.find_last_of('/');
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos || (slash != std::string::npos && dot < slash)) return path + ext;
  return path.substr(0, dot) + ext;
}

}  // namespace

std::string merged_csv(const std::vector<LocTrace>& traces,
                       const std::vector<std::string>& labels) {
  if (traces.empty()) throw EmptyTrace("no traces to merge");
  if (traces.size() != labels.size()) throw ShapeMismatch("one label per trace required");
  for (const auto& t : traces)
    if (t.entries.empty()) throw EmptyTrace("trace has no entries");

  std::set<int> steps;
  std::vector<std::map<int, double>> by_step(traces.size());
  for (std::size_t i = 0; i < traces.size(); ++i)
    for (const auto& [s, v] : traces[i].entries) {
      steps.insert(s);
      by_step[i][s] = v;
    }

  std::ostringstream os;
  os << "step";
  for (const auto& l : labels) os << ',' << sanitize_label(l);
  os << '\n';
  for (int s : steps) {
    os << s;
    for (std::size_t i = 0; i < traces.size(); ++i) {
      os << ',';
      auto it = by_step[i].find(s);
      if (it != by_step[i].end()) os << std::setprecision(17) << it->second;
    }
    os << '\n';
  }
  return os.str();
}

void plot_loc(const std::vector<LocTrace>& traces, const std::vector<std::string>& labels,
              const std::string& out_path) {
  const std::string csv = merged_csv(traces, labels);  // validates
  const std::string csv_path =
      out_path.size() >= 4 && out_path.substr(out_path.size() - 4) == ".csv"
          ? out_path
          : swap_ext(out_path, ".csv");
  std::ofstream cf(csv_path, std::ios::trunc);
  if (!cf) throw Error("cannot write CSV: " + csv_path);
  cf << csv;
  cf.close();

  if (csv_path == out_path) return;
  if (out_path.size() >= 4 && out_path.substr(out_path.size() - 4) == ".svg")
    render_svg(traces, labels, out_path);
  else
    render_png(traces, labels, out_path);
}

}  // namespace kmine::harness
