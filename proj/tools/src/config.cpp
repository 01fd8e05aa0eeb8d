#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cliplab/cli/app.hpp"

namespace cliplab::cli {

#ifndef CLIPLAB_VERSION
#define CLIPLAB_VERSION "0.0.0"
#endif

std::string_view version() { return CLIPLAB_VERSION; }

namespace {

const std::pair<const char*, const char*> kAliases[] = {
    {"method", "objective.method"},
    {"steps", "run.steps"},
    {"seed", "run.seed"},
};

std::string canonical_key(std::string key) {
  for (const auto& [alias, full] : kAliases) {
    if (key == alias) return full;
  }
  return key;
}

}  // namespace

Overrides parse_overrides(const std::vector<std::string>& args) {
  Overrides out;
  for (std::size_t i = 0; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (a.rfind("--", 0) != 0 || a.size() < 3) {
      throw ValidationError("unexpected argument '" + a + "'");
    }
    std::string key = a.substr(2);
    std::string value;
    if (const auto eq = key.find('='); eq != std::string::npos) {
      value = key.substr(eq + 1);
      key.resize(eq);
    } else {
      if (i + 1 >= args.size()) throw ValidationError("missing value for --" + key);
      value = args[++i];
    }
    key = canonical_key(key);
    if (key.find('.') == std::string::npos) throw ValidationError("unknown option --" + key);
    out.emplace_back(key, value);
  }
  return out;
}

void apply_override(json& doc, const std::string& dotted_key, const std::string& value) {
  const auto dot = dotted_key.find('.');
  if (dot == std::string::npos || dot == 0 || dot + 1 == dotted_key.size() ||
      dotted_key.find('.', dot + 1) != std::string::npos) {
    throw ValidationError("override key must look like section.key: '" + dotted_key + "'");
  }
  json parsed = json::parse(value, nullptr, false);
  if (parsed.is_discarded() || parsed.is_structured()) parsed = value;
  if (!doc.is_object()) doc = json::object();
  doc[dotted_key.substr(0, dot)][dotted_key.substr(dot + 1)] = std::move(parsed);
}

json load_config_doc(const std::string& path, const Overrides& overrides) {
  json doc = json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot read config file '" + path + "'");
    try {
      in >> doc;
    } catch (const json::exception& e) {
      throw ValidationError("config file '" + path + "' is not valid JSON: " + e.what());
    }
  }
  for (const auto& [key, value] : overrides) apply_override(doc, key, value);
  return doc;
}

TrainConfig resolve_config(const json& doc) {
  TrainConfig cfg = train_config_from_json(doc);
  cfg.validate();
  return cfg;
}

fs::path output_root() {
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return "runs";
}

std::string short_hash(const std::string& text) {
  std::uint64_t h = mix64(text.size());
  for (unsigned char c : text) h = hash_combine(h, c);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf, 8);
}

std::vector<std::string> split_list(const std::string& text, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, sep)) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> out;
  try {
    for (const std::string& part : split_list(text)) {
      if (const auto dash = part.find('-'); dash != std::string::npos && dash > 0) {
        const std::uint64_t a = std::stoull(part.substr(0, dash));
        const std::uint64_t b = std::stoull(part.substr(dash + 1));
        if (b < a) throw ValidationError("bad seed range '" + part + "'");
        for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
      } else {
        out.push_back(std::stoull(part));
      }
    }
  } catch (const std::logic_error&) {
    throw ValidationError("bad seed list '" + text + "'");
  }
  return out;
}

void write_file_atomic(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write " + tmp.string());
    out << content;
    if (!out) throw InvalidInput("failed writing " + tmp.string());
  }
  fs::rename(tmp, path);
}

json to_json(const Manifest& m) {
  return {
      {"format", kManifestFormat},
      {"command", m.command},
      {"config_path", m.config_path},
      {"seeds", m.seeds},
      {"output_dir", m.output_dir.string()},
      {"argv", m.argv},
      {"versions",
       {{"cliplab", version()},
        {"config", kConfigFormat},
        {"metrics", kMetricsFormat},
        {"checkpoint", kCheckpointFormat},
        {"rng", SeededRng::kAlgorithm}}},
      {"request", m.request},
  };
}

Manifest manifest_from_json(const json& j) {
  if (j.value("format", std::string{}) != kManifestFormat) {
    throw ValidationError("not a run manifest (missing format tag)");
  }
  Manifest m;
  m.command = j.at("command").get<std::string>();
  m.config_path = j.value("config_path", std::string{});
  m.seeds = j.value("seeds", std::vector<std::uint64_t>{});
  m.output_dir = j.at("output_dir").get<std::string>();
  m.argv = j.value("argv", std::vector<std::string>{});
  m.request = j.at("request");
  return m;
}

void write_manifest(const Manifest& m) {
  write_file_atomic(m.output_dir / "manifest.json", to_json(m).dump(2) + "\n");
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read manifest '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("manifest is not valid JSON: " + std::string(e.what()));
  }
  return manifest_from_json(j);
}

}  // namespace cliplab::cli
