#include "adanec/synthesis.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "adanec/rng.hpp"

namespace adanec::synthesis {

namespace fs = std::filesystem;

// ------------------------------------------------------------- DomainSpec

namespace {

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

Interval parse_interval(const std::string& key, const std::string& s) {
  const auto comma = s.find(',');
  Interval iv;
  try {
    if (comma == std::string::npos) {
      iv.lo = iv.hi = std::stod(s);
    } else {
      iv.lo = std::stod(s.substr(0, comma));
      iv.hi = std::stod(s.substr(comma + 1));
    }
  } catch (const std::exception&) {
    throw std::invalid_argument("domain spec: bad interval for " + key + ": '" + s + "'");
  }
  return iv;
}

void check_interval(const char* what, const Interval& iv, double lo, double hi) {
  if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi) || iv.lo > iv.hi || iv.lo < lo || iv.hi > hi) {
    std::ostringstream os;
    os << "domain spec: " << what << " range [" << iv.lo << ", " << iv.hi << "] must be ordered within [" << lo << ", "
       << hi << "]";
    throw std::invalid_argument(os.str());
  }
}

}  // namespace

void DomainSpec::validate() const {
  if (domain_id < 0) throw std::invalid_argument("domain spec: negative id");
  check_interval("omega", omega, 0.0, 1.0);
  check_interval("phi", phi, 0.0, 1.0);
  check_interval("blur", blur_sigma, 0.0, 8.0);
  if (!std::isfinite(gamma) || gamma <= 0.0) throw std::invalid_argument("domain spec: gamma must be positive");
  if (base_pool.empty()) throw std::invalid_argument("domain spec: empty base pool");
}

std::string DomainSpec::to_text() const {
  std::ostringstream os;
  os << "id=" << domain_id << " omega=" << fmt_double(omega.lo) << ',' << fmt_double(omega.hi)
     << " phi=" << fmt_double(phi.lo) << ',' << fmt_double(phi.hi) << " blur=" << fmt_double(blur_sigma.lo) << ','
     << fmt_double(blur_sigma.hi) << " gamma=" << fmt_double(gamma) << " pool=" << base_pool;
  return os.str();
}

DomainSpec DomainSpec::parse(std::string_view text) {
  DomainSpec s;
  std::istringstream is{std::string(text)};
  std::string kv;
  while (is >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("domain spec: bad field '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    if (key == "id") s.domain_id = std::stoi(val);
    else if (key == "omega") s.omega = parse_interval(key, val);
    else if (key == "phi") s.phi = parse_interval(key, val);
    else if (key == "blur") s.blur_sigma = parse_interval(key, val);
    else if (key == "gamma") s.gamma = std::stod(val);
    else if (key == "pool") s.base_pool = val;
    else throw std::invalid_argument("domain spec: unknown field '" + key + "'");
  }
  s.validate();
  return s;
}

void validate_specs(const std::vector<DomainSpec>& specs) {
  std::set<int> ids;
  for (const auto& s : specs) {
    s.validate();
    if (!ids.insert(s.domain_id).second) {
      throw std::invalid_argument("duplicate domain id " + std::to_string(s.domain_id));
    }
  }
  for (std::size_t i = 0; i < specs.size(); ++i) {
    for (std::size_t j = i + 1; j < specs.size(); ++j) {
      const auto& a = specs[i];
      const auto& b = specs[j];
      if (a.omega == b.omega && a.phi == b.phi && a.blur_sigma == b.blur_sigma && a.gamma == b.gamma &&
          a.base_pool == b.base_pool) {
        throw std::invalid_argument("domains " + std::to_string(a.domain_id) + " and " + std::to_string(b.domain_id) +
                                    " have identical synthesis ranges");
      }
    }
  }
}

bool ranges_disjoint(const DomainSpec& target, const std::vector<DomainSpec>& sources) {
  for (const auto& s : sources) {
    if (target.omega.overlaps(s.omega) || target.phi.overlaps(s.phi) || target.blur_sigma.overlaps(s.blur_sigma)) {
      return false;
    }
  }
  return true;
}

// ------------------------------------------------------------ image model

Image gaussian_blur(const Image& img, double sigma) {
  if (sigma < 1e-6) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
    sum += k[i + radius];
  }
  for (double& v : k) v /= sum;

  const int h = img.height();
  const int w = img.width();
  Image tmp(h, w);
  Image out(h, w);
  for (int c = 0; c < Image::kChannels; ++c) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) acc += k[t + radius] * img.at(c, y, std::clamp(x + t, 0, w - 1));
        tmp.at(c, y, x) = acc;
      }
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int t = -radius; t <= radius; ++t) acc += k[t + radius] * tmp.at(c, std::clamp(y + t, 0, h - 1), x);
        out.at(c, y, x) = acc;
      }
  }
  return out;
}

TripletSample synthesize_with(const Image& t_raw, const Image& r_raw, const SynthesisParams& p, int domain_id) {
  require_same_shape(t_raw, r_raw, "synthesize");
  if (!(p.gamma > 0.0)) throw std::invalid_argument("synthesize: gamma must be positive");
  const double inv_gamma = 1.0 / p.gamma;
  auto lin = [&](double v) { return std::pow(v, p.gamma); };
  auto tone = [&](double v) { return std::pow(std::clamp(v, 0.0, 1.0), inv_gamma); };

  Image r_lin(r_raw.height(), r_raw.width());
  for (std::size_t i = 0; i < r_lin.size(); ++i) r_lin.data()[i] = lin(r_raw.data()[i]);
  const Image r_blur = gaussian_blur(r_lin, p.blur_sigma);

  TripletSample s;
  s.domain_id = domain_id;
  s.synthesis = p;
  s.contaminated = Image(t_raw.height(), t_raw.width());
  s.transmission = Image(t_raw.height(), t_raw.width());
  s.reflection = Image(t_raw.height(), t_raw.width());
  for (std::size_t i = 0; i < t_raw.size(); ++i) {
    const double t_part = p.omega * lin(t_raw.data()[i]);
    const double r_part = p.phi * r_blur.data()[i];
    s.contaminated.data()[i] = tone(t_part + r_part);
    s.transmission.data()[i] = tone(t_part);
    s.reflection.data()[i] = tone(r_part);
  }
  return s;
}

TripletSample synthesize(const Image& t_raw, const Image& r_raw, const DomainSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng rng(seed);
  SynthesisParams p;
  p.omega = rng.uniform(spec.omega.lo, spec.omega.hi);
  p.phi = rng.uniform(spec.phi.lo, spec.phi.hi);
  p.blur_sigma = rng.uniform(spec.blur_sigma.lo, spec.blur_sigma.hi);
  p.gamma = spec.gamma;
  return synthesize_with(t_raw, r_raw, p, spec.domain_id);
}

// ------------------------------------------------------- procedural pool

namespace {

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

// One octave of lattice noise in [0,1].
void add_value_noise(Image& img, Rng& rng, int cells, double amplitude) {
  const int h = img.height();
  const int w = img.width();
  for (int c = 0; c < Image::kChannels; ++c) {
    std::vector<double> lattice(static_cast<std::size_t>(cells + 1) * (cells + 1));
    for (double& v : lattice) v = rng.uniform();
    for (int y = 0; y < h; ++y) {
      const double fy = static_cast<double>(y) / h * cells;
      const int y0 = static_cast<int>(fy);
      const double ty = smooth(fy - y0);
      for (int x = 0; x < w; ++x) {
        const double fx = static_cast<double>(x) / w * cells;
        const int x0 = static_cast<int>(fx);
        const double tx = smooth(fx - x0);
        auto at = [&](int yy, int xx) { return lattice[yy * (cells + 1) + xx]; };
        const double top = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
        const double bot = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
        img.at(c, y, x) += amplitude * ((top * (1 - ty) + bot * ty) - 0.5);
      }
    }
  }
}

}  // namespace

Image procedural_image(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  Image img(height, width);

  // background gradient
  double c0[3], c1[3];
  for (int c = 0; c < 3; ++c) {
    c0[c] = rng.uniform(0.1, 0.9);
    c1[c] = rng.uniform(0.1, 0.9);
  }
  const double angle = rng.uniform(0.0, 6.283185307179586);
  const double ca = std::cos(angle);
  const double sa = std::sin(angle);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double u = ((x / (width - 1.0) - 0.5) * ca + (y / (height - 1.0) - 0.5) * sa) / 1.4142 + 0.5;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = c0[c] * (1 - u) + c1[c] * u;
    }

  // shapes
  const int n_shapes = 2 + static_cast<int>(rng.below(5));
  for (int s = 0; s < n_shapes; ++s) {
    const bool ellipse = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, width);
    const double cy = rng.uniform(0.0, height);
    const double rx = rng.uniform(0.08, 0.35) * width;
    const double ry = rng.uniform(0.08, 0.35) * height;
    const double alpha = rng.uniform(0.6, 1.0);
    double col[3];
    for (double& v : col) v = rng.uniform(0.0, 1.0);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double dx = (x - cx) / rx;
        const double dy = (y - cy) / ry;
        const bool inside = ellipse ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) = (1 - alpha) * img.at(c, y, x) + alpha * col[c];
      }
  }

  // stripes on some images
  if (rng.uniform() < 0.35) {
    const double period = rng.uniform(4.0, 12.0);
    const double theta = rng.uniform(0.0, 3.141592653589793);
    const double amp = rng.uniform(0.08, 0.2);
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double u = (x * std::cos(theta) + y * std::sin(theta)) / period;
        const double v = std::sin(6.283185307179586 * u) * amp;
        for (int c = 0; c < 3; ++c) img.at(c, y, x) += v;
      }
  }

  add_value_noise(img, rng, 4, 0.25);
  add_value_noise(img, rng, 12, 0.12);
  img.clamp01();
  return img;
}

Image pool_image(const std::string& pool, int height, int width, std::uint64_t seed) {
  if (pool == "procedural" || pool.rfind("procedural:", 0) == 0) {
    std::uint64_t tag = 0;
    for (char ch : pool) tag = tag * 131 + static_cast<unsigned char>(ch);
    return procedural_image(height, width, mix_seed(seed, tag));
  }
  if (pool.rfind("dir:", 0) == 0) {
    const fs::path dir = pool.substr(4);
    std::vector<fs::path> files;
    if (fs::is_directory(dir)) {
      for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") files.push_back(e.path());
    }
    if (files.empty()) throw IoError("image pool " + pool + " has no PNG files");
    std::sort(files.begin(), files.end());
    Rng rng(seed);
    const Image src = load_png(files[rng.below(files.size())]);
    if (src.height() < height || src.width() < width) return resize_bilinear(src, height, width);
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(src.height() - height + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(src.width() - width + 1)));
    Image out(height, width);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out.at(c, y, x) = src.at(c, y0 + y, x0 + x);
    return out;
  }
  throw std::invalid_argument("unknown image pool '" + pool + "'");
}

// --------------------------------------------------------------- manifest

int DatasetManifest::num_domains() const {
  int n = 0;
  for (const auto& r : records) n = std::max(n, r.domain_id + 1);
  return n;
}

std::vector<int> DatasetManifest::domain_counts() const {
  std::vector<int> counts(num_domains(), 0);
  for (const auto& r : records) ++counts[r.domain_id];
  return counts;
}

fs::path DatasetManifest::resolve(const fs::path& p) const { return p.is_absolute() ? p : base_dir / p; }

const DomainSpec* DatasetManifest::spec_for(int domain_id) const {
  for (const auto& s : specs)
    if (s.domain_id == domain_id) return &s;
  return nullptr;
}

namespace {

fs::path params_path(const fs::path& manifest) { return fs::path(manifest.string() + ".params"); }

}  // namespace

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  os << "# adanec-manifest v1 seed=" << m.seed << '\n';
  for (const auto& s : m.specs) os << "# domain " << s.to_text() << '\n';
  for (const auto& r : m.records) {
    os << r.contaminated.generic_string() << '\t' << r.transmission.generic_string() << '\t'
       << r.reflection.generic_string() << '\t' << r.domain_id << '\n';
  }
  if (!os) throw IoError("manifest write failed: " + path.string());

  std::ofstream ps(params_path(path), std::ios::trunc);
  if (!ps) throw IoError("cannot write manifest params for " + path.string());
  ps.precision(17);
  for (const auto& r : m.records) {
    if (!r.synthesis) continue;
    ps << r.contaminated.generic_string() << '\t' << r.synthesis->omega << '\t' << r.synthesis->phi << '\t'
       << r.synthesis->blur_sigma << '\t' << r.synthesis->gamma << '\n';
  }
}

DatasetManifest read_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  DatasetManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  if (!std::getline(is, line) || line.rfind("# adanec-manifest v1 seed=", 0) != 0) {
    throw IoError("manifest " + path.string() + ": missing header");
  }
  m.seed = std::stoull(line.substr(std::string("# adanec-manifest v1 seed=").size()));
  int lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line.rfind("# domain ", 0) == 0) {
      m.specs.push_back(DomainSpec::parse(line.substr(9)));
      continue;
    }
    if (line[0] == '#') continue;
    std::istringstream ls(line);
    std::string a, b, c, d;
    if (!std::getline(ls, a, '\t') || !std::getline(ls, b, '\t') || !std::getline(ls, c, '\t') ||
        !std::getline(ls, d)) {
      throw IoError("manifest " + path.string() + ":" + std::to_string(lineno) + ": expected 4 tab-separated fields");
    }
    ManifestRecord r{a, b, c, std::stoi(d), std::nullopt};
    for (const auto* p : {&r.contaminated, &r.transmission, &r.reflection}) {
      if (!fs::exists(m.resolve(*p))) throw IoError("manifest references missing file " + m.resolve(*p).string());
    }
    m.records.push_back(std::move(r));
  }

  std::set<int> ids;
  for (const auto& r : m.records) {
    if (r.domain_id < 0) throw IoError("manifest: negative domain id");
    ids.insert(r.domain_id);
  }
  if (!ids.empty() && (*ids.begin() != 0 || *ids.rbegin() != static_cast<int>(ids.size()) - 1)) {
    throw IoError("manifest: domain ids are not contiguous from 0");
  }

  std::ifstream ps(params_path(path));
  if (ps) {
    std::map<std::string, SynthesisParams> by_path;
    while (std::getline(ps, line)) {
      std::istringstream ls(line);
      std::string key;
      SynthesisParams p;
      if (!std::getline(ls, key, '\t') || !(ls >> p.omega >> p.phi >> p.blur_sigma >> p.gamma)) continue;
      by_path[key] = p;
    }
    for (auto& r : m.records) {
      auto it = by_path.find(r.contaminated.generic_string());
      if (it != by_path.end()) r.synthesis = it->second;
    }
  }
  return m;
}

DatasetManifest generate_dataset(const std::vector<DomainSpec>& specs, int count_per_domain, std::uint64_t seed,
                                 const fs::path& out_dir, int image_size) {
  validate_specs(specs);
  if (count_per_domain < 0) throw std::invalid_argument("count_per_domain must be non-negative");
  if (image_size < Image::kMinSide) throw std::invalid_argument("image size below minimum");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec || !fs::is_directory(out_dir)) throw IoError("cannot create output directory " + out_dir.string());

  DatasetManifest m;
  m.seed = seed;
  m.specs = specs;
  m.base_dir = out_dir;

  struct Job {
    const DomainSpec* spec;
    int index;
  };
  std::vector<Job> jobs;
  for (const auto& s : specs)
    for (int k = 0; k < count_per_domain; ++k) jobs.push_back({&s, k});
  m.records.resize(jobs.size());

  for (const auto& s : specs) {
    if (count_per_domain > 0) fs::create_directories(out_dir / ("d" + std::to_string(s.domain_id)));
  }

  std::vector<std::string> errors(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::ptrdiff_t j = 0; j < static_cast<std::ptrdiff_t>(jobs.size()); ++j) {
    try {
      const auto& job = jobs[j];
      const std::uint64_t sample_seed = mix_seed(seed, job.spec->domain_id, job.index);
      const Image t_raw = pool_image(job.spec->base_pool, image_size, image_size, mix_seed(sample_seed, 1));
      const Image r_raw = pool_image(job.spec->base_pool, image_size, image_size, mix_seed(sample_seed, 2));
      const TripletSample s = synthesize(t_raw, r_raw, *job.spec, mix_seed(sample_seed, 3));
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%05d", job.index);
      const fs::path dir = "d" + std::to_string(job.spec->domain_id);
      ManifestRecord r{dir / (std::string(stem) + "_I.png"), dir / (std::string(stem) + "_T.png"),
                       dir / (std::string(stem) + "_R.png"), job.spec->domain_id, s.synthesis};
      save_png(s.contaminated, out_dir / r.contaminated);
      save_png(s.transmission, out_dir / r.transmission);
      save_png(s.reflection, out_dir / r.reflection);
      m.records[j] = std::move(r);
    } catch (const std::exception& e) {
      errors[j] = e.what();
    }
  }
  for (const auto& e : errors)
    if (!e.empty()) throw IoError("generate_dataset: " + e);

  write_manifest(m, out_dir / "manifest.tsv");
  return m;
}

std::vector<DomainSpec> default_source_specs() {
  return {
      DomainSpec{0, {0.90, 1.00}, {0.04, 0.10}, {0.0, 0.5}, 2.2, "procedural"},
      DomainSpec{1, {0.68, 0.76}, {0.30, 0.40}, {2.2, 3.0}, 2.2, "procedural"},
      DomainSpec{2, {0.35, 0.45}, {0.70, 0.85}, {6.0, 8.0}, 2.2, "procedural"},
  };
}

DomainSpec default_target_spec() { return DomainSpec{0, {0.52, 0.60}, {0.50, 0.60}, {4.0, 5.0}, 2.2, "procedural"}; }

}  // namespace adanec::synthesis
