#include "transukan/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>

#include "transukan/error.hpp"

namespace tukan {

namespace fs = std::filesystem;

namespace {

// Header tokenizer that skips whitespace and '#' comments.
class PgmHeader {
 public:
  PgmHeader(const std::string& bytes, const std::string& name) : bytes_(bytes), name_(name) {}

  std::string token() {
    skip_space();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(static_cast<unsigned char>(bytes_[pos_])) && bytes_[pos_] != '#') {
      out += bytes_[pos_++];
    }
    if (out.empty()) throw DataError(name_ + ": truncated PGM header");
    return out;
  }

  std::size_t number(const char* what) {
    const std::string t = token();
    if (!std::all_of(t.begin(), t.end(), [](char c) { return std::isdigit(static_cast<unsigned char>(c)); }) ||
        t.size() > 9) {
      throw DataError(name_ + ": bad PGM " + what + " '" + t + "'");
    }
    return std::stoul(t);
  }

  // Exactly one whitespace byte separates maxval from the raster.
  std::size_t raster_start() {
    if (pos_ >= bytes_.size() || !std::isspace(static_cast<unsigned char>(bytes_[pos_]))) {
      throw DataError(name_ + ": missing whitespace before PGM raster");
    }
    return pos_ + 1;
  }

 private:
  void skip_space() {
    while (pos_ < bytes_.size()) {
      const char c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::string& bytes_;
  const std::string& name_;
  std::size_t pos_ = 0;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string() + ": cannot open for reading");
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

struct Ellipse {
  double cy, cx, ry, rx, angle;
  bool contains(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (dx * c + dy * s) / rx, v = (-dx * s + dy * c) / ry;
    return u * u + v * v <= 1.0;
  }
};

Ellipse random_ellipse(Rng& rng, double size) {
  std::uniform_real_distribution<double> centre(0.2 * size, 0.8 * size), radius(0.08 * size, 0.3 * size),
      angle(0.0, std::numbers::pi);
  return {centre(rng), centre(rng), radius(rng), radius(rng), angle(rng)};
}

struct Rect {
  double y0, x0, y1, x1;
  bool contains(double y, double x) const { return y >= y0 && y <= y1 && x >= x0 && x <= x1; }
};

Rect random_rect(Rng& rng, double size) {
  std::uniform_real_distribution<double> corner(0.05 * size, 0.65 * size), extent(0.12 * size, 0.3 * size);
  const double y0 = corner(rng), x0 = corner(rng);
  return {y0, x0, y0 + extent(rng), x0 + extent(rng)};
}

// Pixel centres are at (i + 0.5).
SegSample synth_one(Rng& rng, std::size_t size, SynthTask task) {
  const double fsize = static_cast<double>(size);
  std::vector<Label> mask(size * size);
  std::uniform_int_distribution<int> count(1, 3);
  for (;;) {
    std::fill(mask.begin(), mask.end(), 0);
    const int n_shapes = count(rng);
    for (int k = 0; k < n_shapes; ++k) {
      const bool rect = task == SynthTask::kTwoClassShapes && std::bernoulli_distribution(0.5)(rng);
      const Ellipse e = random_ellipse(rng, fsize);
      const Rect r = random_rect(rng, fsize);
      for (std::size_t y = 0; y < size; ++y) {
        for (std::size_t x = 0; x < size; ++x) {
          const double py = static_cast<double>(y) + 0.5, px = static_cast<double>(x) + 0.5;
          if (rect ? r.contains(py, px) : e.contains(py, px)) mask[y * size + x] = rect ? 2 : 1;
        }
      }
    }
    const auto fg = static_cast<double>(std::count_if(mask.begin(), mask.end(), [](Label l) { return l != 0; }));
    const double frac = fg / static_cast<double>(mask.size());
    if (frac >= 0.05 && frac <= 0.6) break;
  }
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  const double level[3] = {0.25 + jitter(rng), 0.7 + jitter(rng), 0.95 + jitter(rng) / 2.0};
  std::normal_distribution<double> noise(0.0, 0.08);
  SegSample s;
  s.height = s.width = size;
  s.image = Tensor({1, size, size});
  auto img = s.image.data();
  for (std::size_t i = 0; i < mask.size(); ++i) img[i] = clamp01(level[mask[i]] + noise(rng));
  s.mask = std::move(mask);
  return s;
}

std::string index_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%03zu.pgm", i);
  return buf;
}

}  // namespace

GrayImage read_pgm(const fs::path& path) {
  const std::string name = path.string();
  const std::string bytes = read_file(path);
  PgmHeader header(bytes, name);
  if (header.token() != "P5") throw DataError(name + ": not a binary PGM (expected P5)");
  GrayImage img;
  img.width = header.number("width");
  img.height = header.number("height");
  const std::size_t maxval = header.number("maxval");
  if (img.width == 0 || img.height == 0) throw DataError(name + ": PGM has zero size");
  if (maxval == 0 || maxval > 65535) throw DataError(name + ": PGM maxval " + std::to_string(maxval) + " out of range");
  img.maxval = static_cast<std::uint16_t>(maxval);
  const std::size_t start = header.raster_start();
  const std::size_t bpp = maxval < 256 ? 1 : 2;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - start < n * bpp) {
    throw DataError(name + ": PGM raster truncated (" + std::to_string(bytes.size() - start) + " of " +
                    std::to_string(n * bpp) + " bytes)");
  }
  img.pixels.resize(n);
  const auto* raw = reinterpret_cast<const unsigned char*>(bytes.data() + start);
  for (std::size_t i = 0; i < n; ++i) {
    const unsigned v = bpp == 1 ? raw[i] : (static_cast<unsigned>(raw[2 * i]) << 8) | raw[2 * i + 1];
    if (v > maxval) throw DataError(name + ": pixel value exceeds maxval");
    img.pixels[i] = static_cast<std::uint16_t>(v);
  }
  return img;
}

void write_pgm(const fs::path& path, const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height || image.width == 0 || image.maxval == 0) {
    throw ContractError("write_pgm: inconsistent image");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << "P5\n" << image.width << ' ' << image.height << '\n' << image.maxval << '\n';
  std::string raster;
  raster.reserve(image.pixels.size() * 2);
  for (std::uint16_t v : image.pixels) {
    if (v > image.maxval) throw ContractError("write_pgm: pixel exceeds maxval");
    if (image.maxval < 256) {
      raster += static_cast<char>(v);
    } else {
      raster += static_cast<char>(v >> 8);
      raster += static_cast<char>(v & 0xff);
    }
  }
  out.write(raster.data(), static_cast<std::streamsize>(raster.size()));
  if (!out) throw IoError(path.string() + ": write failed");
}

LabelTable default_label_table(std::size_t n_classes) {
  if (n_classes < 2 || n_classes > 256) throw ConfigError("label table: n_classes must be in [2, 256]");
  const std::size_t step = 255 / (n_classes - 1);
  LabelTable t;
  for (std::size_t k = 0; k < n_classes; ++k) t[static_cast<std::uint16_t>(k * step)] = static_cast<Label>(k);
  return t;
}

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width) {
  if (image.rank() != 3) throw DimensionError("resize_bilinear: expected [C,H,W], got " + shape_str(image.shape()));
  const std::size_t C = image.dim(0), H = image.dim(1), W = image.dim(2);
  Tensor out({C, height, width});
  auto src = image.data();
  auto dst = out.data();
  auto coord = [](std::size_t o, std::size_t n_out, std::size_t n_in) {
    return n_out == 1 ? 0.0 : static_cast<double>(o) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
  };
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < height; ++y) {
      const double fy = coord(y, height, H);
      const std::size_t y0 = static_cast<std::size_t>(fy), y1 = std::min(y0 + 1, H - 1);
      const double wy = fy - static_cast<double>(y0);
      for (std::size_t x = 0; x < width; ++x) {
        const double fx = coord(x, width, W);
        const std::size_t x0 = static_cast<std::size_t>(fx), x1 = std::min(x0 + 1, W - 1);
        const double wx = fx - static_cast<double>(x0);
        const double* p = src.data() + c * H * W;
        const double top = p[y0 * W + x0] * (1.0 - wx) + p[y0 * W + x1] * wx;
        const double bot = p[y1 * W + x0] * (1.0 - wx) + p[y1 * W + x1] * wx;
        dst[(c * height + y) * width + x] = top * (1.0 - wy) + bot * wy;
      }
    }
  }
  return out;
}

std::vector<Label> resize_nearest(const std::vector<Label>& mask, std::size_t height, std::size_t width,
                                  std::size_t out_height, std::size_t out_width) {
  if (mask.size() != height * width) throw DimensionError("resize_nearest: mask size does not match dimensions");
  std::vector<Label> out(out_height * out_width);
  for (std::size_t y = 0; y < out_height; ++y) {
    const std::size_t sy = std::min(height - 1, (2 * y + 1) * height / (2 * out_height));
    for (std::size_t x = 0; x < out_width; ++x) {
      const std::size_t sx = std::min(width - 1, (2 * x + 1) * width / (2 * out_width));
      out[y * out_width + x] = mask[sy * width + sx];
    }
  }
  return out;
}

SegSample load_sample(const fs::path& image_path, const fs::path& mask_path, const LabelTable& table,
                      std::size_t height, std::size_t width) {
  const GrayImage img = read_pgm(image_path);
  const GrayImage msk = read_pgm(mask_path);
  if (img.width != msk.width || img.height != msk.height) {
    throw DataError(mask_path.string() + ": mask is " + std::to_string(msk.width) + "x" + std::to_string(msk.height) +
                    " but image is " + std::to_string(img.width) + "x" + std::to_string(img.height));
  }
  SegSample s;
  s.height = img.height;
  s.width = img.width;
  s.image = Tensor({1, img.height, img.width});
  auto d = s.image.data();
  for (std::size_t i = 0; i < img.pixels.size(); ++i) d[i] = img.pixels[i] / static_cast<double>(img.maxval);
  s.mask.resize(msk.pixels.size());
  for (std::size_t i = 0; i < msk.pixels.size(); ++i) {
    const auto it = table.find(msk.pixels[i]);
    if (it == table.end()) {
      throw DataError(mask_path.string() + ": mask value " + std::to_string(msk.pixels[i]) + " not in label table");
    }
    s.mask[i] = it->second;
  }
  if (height != s.height || width != s.width) {
    s.image = resize_bilinear(s.image, height, width);
    s.mask = resize_nearest(s.mask, s.height, s.width, height, width);
    s.height = height;
    s.width = width;
  }
  return s;
}

SynthTask parse_synth_task(const std::string& name) {
  if (name == "binary-blob") return SynthTask::kBinaryBlob;
  if (name == "two-class-shapes") return SynthTask::kTwoClassShapes;
  throw ConfigError("unknown synthetic task '" + name + "' (expected binary-blob or two-class-shapes)");
}

std::string synth_task_name(SynthTask task) {
  return task == SynthTask::kBinaryBlob ? "binary-blob" : "two-class-shapes";
}

std::size_t synth_task_classes(SynthTask task) { return task == SynthTask::kBinaryBlob ? 2 : 3; }

std::vector<SegSample> synth_dataset(std::uint64_t seed, std::size_t n, std::size_t size, SynthTask task) {
  if (size == 0 || size % 8 != 0) throw ConfigError("synth_dataset: size must be a positive multiple of 8");
  Rng rng(seed);
  std::vector<SegSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(synth_one(rng, size, task));
  return out;
}

void save_dataset(const fs::path& dir, const std::vector<SegSample>& samples, std::size_t n_classes) {
  std::error_code ec;
  fs::create_directories(dir / "images", ec);
  fs::create_directories(dir / "masks", ec);
  if (ec) throw IoError(dir.string() + ": cannot create dataset directories: " + ec.message());
  const std::size_t step = 255 / (n_classes - 1);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const SegSample& s = samples[i];
    if (s.image.dim(0) != 1) throw ContractError("save_dataset: only single-channel images are stored as PGM");
    GrayImage img{s.width, s.height, 255, {}}, msk{s.width, s.height, 255, {}};
    for (double v : s.image.data()) img.pixels.push_back(static_cast<std::uint16_t>(std::lround(clamp01(v) * 255.0)));
    for (Label l : s.mask) msk.pixels.push_back(static_cast<std::uint16_t>(static_cast<std::size_t>(l) * step));
    write_pgm(dir / "images" / index_name(i), img);
    write_pgm(dir / "masks" / index_name(i), msk);
  }
}

std::vector<SegSample> load_dataset(const fs::path& dir, const LabelTable& table, std::size_t height,
                                    std::size_t width) {
  const fs::path images = dir / "images", masks = dir / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks)) {
    throw IoError(dir.string() + ": expected images/ and masks/ subdirectories");
  }
  std::vector<fs::path> names;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (entry.path().extension() == ".pgm") names.push_back(entry.path().filename());
  }
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError(images.string() + ": no .pgm files");
  std::vector<SegSample> out;
  for (const fs::path& name : names) {
    if (!fs::exists(masks / name)) throw DataError((masks / name).string() + ": missing mask for image");
    out.push_back(load_sample(images / name, masks / name, table, height, width));
  }
  return out;
}

DataSplit split_indices(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const std::size_t n_train = n * 8 / 10, n_val = n / 10;
  DataSplit s;
  s.train.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train),
               idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), idx.end());
  return s;
}

SegSample augment(const SegSample& sample, Rng& rng) {
  const bool flip_h = std::bernoulli_distribution(0.5)(rng);
  const bool flip_v = std::bernoulli_distribution(0.5)(rng);
  const int rot = std::uniform_int_distribution<int>(0, 3)(rng);
  const std::size_t H = sample.height, W = sample.width, C = sample.image.dim(0);
  const int turns = H == W ? rot : 0;
  // Source coordinate of destination pixel (y, x).
  auto source = [&](std::size_t y, std::size_t x) {
    for (int t = 0; t < turns; ++t) {
      const std::size_t ny = x, nx = W - 1 - y;  // inverse of a quarter turn counter-clockwise
      y = ny;
      x = nx;
    }
    if (flip_v) y = H - 1 - y;
    if (flip_h) x = W - 1 - x;
    return y * W + x;
  };
  SegSample out;
  out.height = H;
  out.width = W;
  out.image = Tensor(sample.image.shape());
  out.mask.resize(sample.mask.size());
  auto src = sample.image.data();
  auto dst = out.image.data();
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t x = 0; x < W; ++x) {
      const std::size_t s = source(y, x);
      out.mask[y * W + x] = sample.mask[s];
      for (std::size_t c = 0; c < C; ++c) dst[(c * H + y) * W + x] = src[c * H * W + s];
    }
  }
  return out;
}

}  // namespace tukan
