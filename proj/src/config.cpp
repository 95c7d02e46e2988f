#include "adanec/config.hpp"

#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace adanec {

namespace {

std::string trim(std::string_view s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return std::string(s.substr(a, b - a));
}

std::vector<std::string> split_list(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  if (!trim(cur).empty() || !out.empty()) out.push_back(trim(cur));
  return out;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    T out;
    if constexpr (std::is_same_v<T, double>) out = std::stod(value, &used);
    else if constexpr (std::is_same_v<T, std::uint64_t>) out = std::stoull(value, &used);
    else out = static_cast<T>(std::stoi(value, &used));
    if (used != value.size()) throw std::invalid_argument("trailing characters");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "': cannot parse '" + value + "' as a number");
  }
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes" || value == "on") return true;
  if (value == "false" || value == "0" || value == "no" || value == "off") return false;
  throw ConfigError("config key '" + key + "': expected a boolean, got '" + value + "'");
}

std::vector<int> parse_ints(const std::string& key, const std::string& value) {
  std::vector<int> out;
  for (const auto& item : split_list(value)) out.push_back(parse_number<int>(key, item));
  return out;
}

}  // namespace

std::vector<combine::CombinationPolicy> ExperimentConfig::default_policies() {
  using namespace combine;
  std::vector<CombinationPolicy> out;
  for (Source s : {Source::Rtaw, Source::Uniform, Source::Classifier})
    for (Level l : {Level::Image, Level::Domain})
      for (Mode m : {Mode::OF, Mode::NI}) out.push_back({m, l, s});
  return out;
}

void ExperimentConfig::validate() const {
  if (sources.size() < 2) {
    throw ConfigError("at least two source domains are required for leave-one-domain-out training, got " +
                      std::to_string(sources.size()));
  }
  try {
    synthesis::validate_specs(sources);
    for (std::size_t i = 0; i < sources.size(); ++i) {
      if (sources[i].domain_id != static_cast<int>(i)) throw ConfigError("source domain ids must be 0..N-1 in order");
    }
    target.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (samples_per_domain < 5) throw ConfigError("data.samples_per_domain must be at least 5");
  if (target_samples < 1) throw ConfigError("data.target_samples must be positive");
  if (!(split_ratio > 0.0 && split_ratio < 1.0)) throw ConfigError("data.split must lie in (0,1)");
  const int factor = backbone::build_arch(backbone).downsample_factor();
  if (image_size < 16 || image_size % factor != 0) {
    throw ConfigError("data.image_size must be >= 16 and divisible by " + std::to_string(factor));
  }
  if (backbone.steps < 0 || backbone.batch < 1 || backbone.lr <= 0.0) throw ConfigError("invalid backbone training settings");
  if (backbone.crop != 0 && (backbone.crop > image_size || backbone.crop % factor != 0)) {
    throw ConfigError("backbone.crop must be 0 or a multiple of " + std::to_string(factor) + " not above the image size");
  }
  if (rtaw.steps < 0 || rtaw.batch < 1 || rtaw.lr <= 0.0 || rtaw.lambda < 0.0) throw ConfigError("invalid rtaw settings");
  if (rtaw.feature_dim < 1 || rtaw.proj_dim < 1) throw ConfigError("rtaw dimensions must be positive");
  if (classifier.steps < 0 || classifier.batch < 1 || classifier.lr <= 0.0 || classifier.channels.empty()) {
    throw ConfigError("invalid classifier settings");
  }
  if (policies.empty()) throw ConfigError("eval.policies must name at least one policy");
  if (grid_samples < 0) throw ConfigError("eval.grid_samples must be non-negative");
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "seed = " << seed << '\n';
  os << "out_dir = " << out_dir.string() << '\n';
  os << "data.samples_per_domain = " << samples_per_domain << '\n';
  os << "data.target_samples = " << target_samples << '\n';
  os << "data.image_size = " << image_size << '\n';
  os << "data.split = " << fmt(split_ratio) << '\n';
  for (const auto& s : sources) os << "domain." << s.domain_id << " = " << s.to_text() << '\n';
  os << "target = " << target.to_text() << '\n';
  os << "backbone.width = " << backbone.width << '\n';
  os << "backbone.depth = " << backbone.depth << '\n';
  os << "backbone.steps = " << backbone.steps << '\n';
  os << "backbone.batch = " << backbone.batch << '\n';
  os << "backbone.crop = " << backbone.crop << '\n';
  os << "backbone.lr = " << fmt(backbone.lr) << '\n';
  os << "loss.lambda_fid = " << fmt(backbone.loss.lambda_fid) << '\n';
  os << "loss.lambda_rec = " << fmt(backbone.loss.lambda_rec) << '\n';
  os << "loss.gradient_term = " << (backbone.loss.gradient_term ? "true" : "false") << '\n';
  os << "rtaw.channels = " << join_ints(rtaw.extractor_channels) << '\n';
  os << "rtaw.feature_dim = " << rtaw.feature_dim << '\n';
  os << "rtaw.proj_dim = " << rtaw.proj_dim << '\n';
  os << "rtaw.lambda = " << fmt(rtaw.lambda) << '\n';
  os << "rtaw.steps = " << rtaw.steps << '\n';
  os << "rtaw.batch = " << rtaw.batch << '\n';
  os << "rtaw.lr = " << fmt(rtaw.lr) << '\n';
  os << "rtaw.ide_form = full\n";
  os << "classifier.channels = " << join_ints(classifier.channels) << '\n';
  os << "classifier.input_size = " << classifier.input_size << '\n';
  os << "classifier.steps = " << classifier.steps << '\n';
  os << "classifier.batch = " << classifier.batch << '\n';
  os << "classifier.lr = " << fmt(classifier.lr) << '\n';
  os << "classifier.augment = " << (classifier.augment ? "true" : "false") << '\n';
  os << "eval.policies = ";
  for (std::size_t i = 0; i < policies.size(); ++i) os << (i ? "," : "") << policies[i].to_text();
  os << '\n';
  os << "eval.noide = " << (noide_ablation ? "true" : "false") << '\n';
  os << "eval.grid_samples = " << grid_samples << '\n';
  return os.str();
}

ExperimentConfig ExperimentConfig::parse(std::string_view text) {
  ExperimentConfig c;
  std::map<int, synthesis::DomainSpec> domains;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (!seen.insert(key).second) throw ConfigError("config key '" + key + "' given twice");
    auto spec = [&](const std::string& v) {
      try {
        return synthesis::DomainSpec::parse(v);
      } catch (const std::exception& e) {
        throw ConfigError("config key '" + key + "': " + e.what());
      }
    };

    if (key == "seed") c.seed = parse_number<std::uint64_t>(key, value);
    else if (key == "out_dir") c.out_dir = value;
    else if (key == "data.samples_per_domain") c.samples_per_domain = parse_number<int>(key, value);
    else if (key == "data.target_samples") c.target_samples = parse_number<int>(key, value);
    else if (key == "data.image_size") c.image_size = parse_number<int>(key, value);
    else if (key == "data.split") c.split_ratio = parse_number<double>(key, value);
    else if (key.rfind("domain.", 0) == 0) {
      const int id = parse_number<int>(key, key.substr(7));
      auto s = spec(value);
      if (s.domain_id != id) throw ConfigError("config key '" + key + "': spec id=" + std::to_string(s.domain_id) + " differs from the key");
      domains[id] = s;
    } else if (key == "target") c.target = spec(value);
    else if (key == "backbone.width") c.backbone.width = parse_number<int>(key, value);
    else if (key == "backbone.depth") c.backbone.depth = parse_number<int>(key, value);
    else if (key == "backbone.steps") c.backbone.steps = parse_number<int>(key, value);
    else if (key == "backbone.batch") c.backbone.batch = parse_number<int>(key, value);
    else if (key == "backbone.crop") c.backbone.crop = parse_number<int>(key, value);
    else if (key == "backbone.lr") c.backbone.lr = parse_number<double>(key, value);
    else if (key == "loss.lambda_fid") c.backbone.loss.lambda_fid = parse_number<double>(key, value);
    else if (key == "loss.lambda_rec") c.backbone.loss.lambda_rec = parse_number<double>(key, value);
    else if (key == "loss.gradient_term") c.backbone.loss.gradient_term = parse_bool(key, value);
    else if (key == "rtaw.channels") c.rtaw.extractor_channels = parse_ints(key, value);
    else if (key == "rtaw.feature_dim") c.rtaw.feature_dim = parse_number<int>(key, value);
    else if (key == "rtaw.proj_dim") c.rtaw.proj_dim = parse_number<int>(key, value);
    else if (key == "rtaw.lambda") c.rtaw.lambda = parse_number<double>(key, value);
    else if (key == "rtaw.steps") c.rtaw.steps = parse_number<int>(key, value);
    else if (key == "rtaw.batch") c.rtaw.batch = parse_number<int>(key, value);
    else if (key == "rtaw.lr") c.rtaw.lr = parse_number<double>(key, value);
    else if (key == "rtaw.ide_form") {
      if (value != "full") throw ConfigError("rtaw.ide_form: only 'full' is supported, got '" + value + "'");
    } else if (key == "classifier.channels") c.classifier.channels = parse_ints(key, value);
    else if (key == "classifier.input_size") c.classifier.input_size = parse_number<int>(key, value);
    else if (key == "classifier.steps") c.classifier.steps = parse_number<int>(key, value);
    else if (key == "classifier.batch") c.classifier.batch = parse_number<int>(key, value);
    else if (key == "classifier.lr") c.classifier.lr = parse_number<double>(key, value);
    else if (key == "classifier.augment") c.classifier.augment = parse_bool(key, value);
    else if (key == "eval.policies") {
      c.policies.clear();
      for (const auto& p : split_list(value)) {
        try {
          c.policies.push_back(combine::CombinationPolicy::parse(p));
        } catch (const std::exception& e) {
          throw ConfigError(std::string("eval.policies: ") + e.what());
        }
      }
    } else if (key == "eval.noide") c.noide_ablation = parse_bool(key, value);
    else if (key == "eval.grid_samples") c.grid_samples = parse_number<int>(key, value);
    else throw ConfigError("unknown config key '" + key + "' on line " + std::to_string(lineno));
  }
  if (!domains.empty()) {
    c.sources.clear();
    for (auto& [id, s] : domains) c.sources.push_back(s);
  }
  // Loss settings are shared by expert and RTAW training.
  c.rtaw.loss = c.backbone.loss;
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::string ExperimentConfig::select(const std::vector<std::string>& keys) const {
  std::istringstream in(to_text());
  std::string line, out;
  while (std::getline(in, line)) {
    const std::string key = trim(line.substr(0, line.find('=')));
    for (const auto& k : keys) {
      const bool match = k.back() == '.' ? key.rfind(k, 0) == 0 : key == k;
      if (match) {
        out += line;
        out += '\n';
        break;
      }
    }
  }
  return out;
}

std::uint64_t fnv1a(std::string_view text, std::uint64_t h) {
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

StageHashes stage_hashes(const ExperimentConfig& c) {
  auto chain = [](std::string_view stage, std::initializer_list<std::uint64_t> upstream, const std::string& body) {
    std::string s(stage);
    for (auto u : upstream) s += ":" + std::to_string(u);
    s += '\n';
    s += body;
    return fnv1a(s);
  };
  StageHashes h;
  h.data = chain("data", {}, c.select({"seed", "data.samples_per_domain", "data.target_samples", "data.image_size",
                                       "domain.", "target"}));
  h.experts = chain("experts", {h.data}, c.select({"data.split", "backbone.", "loss."}));
  std::string rtaw_keys = c.select({"rtaw."});
  h.rtaw = chain("rtaw", {h.experts}, rtaw_keys);
  std::string noide_keys;
  std::istringstream in(rtaw_keys);
  for (std::string line; std::getline(in, line);)
    if (line.rfind("rtaw.lambda ", 0) != 0) noide_keys += line + "\n";
  h.rtaw_noide = chain("rtaw_noide", {h.experts}, noide_keys);
  h.classifier = chain("classifier", {h.data}, c.select({"data.split", "classifier."}));
  h.eval = chain("eval", {h.experts, h.rtaw, c.noide_ablation ? h.rtaw_noide : 0, h.classifier}, c.select({"eval."}));
  return h;
}

}  // namespace adanec
