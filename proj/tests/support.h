#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <regex>
#include <stdexcept>
#include <sys/wait.h>
#include <string>
#include <vector>

#include <json.hpp>

namespace gridlens::testing {

inline std::string quote(const std::filesystem::path& p) { return "'" + p.string() + "'"; }

/// Runs the CLI with `args`, capturing stdout/stderr into files under `log_dir`.
/// `env` is prepended verbatim (e.g. "MARLENS_SEED=3"). Returns the exit code.
inline int run_cli(const std::string& args, const std::filesystem::path& log_dir, const std::string& env = "") {
  std::filesystem::create_directories(log_dir);
  const std::string cmd = (env.empty() ? std::string() : "env " + env + " ") + "'" + GRIDLENS_CLI + "' " + args + " >" + quote(log_dir / "stdout.txt") +
                          " 2>" + quote(log_dir / "stderr.txt");
  const int status = std::system(cmd.c_str());
  if (status == -1) throw std::runtime_error("cannot spawn " + cmd);
  return WIFEXITED(status) ? WEXITSTATUS(status) : 128;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

/// Trains (2 episodes + test) and analyzes a small run with default traffic in
/// a fresh directory. Returns the run directory.
inline std::filesystem::path make_fixture_run(const std::string& name) {
  namespace fs = std::filesystem;
  const fs::path root = fs::temp_directory_path() / ("gridlens_fixture_" + name);
  fs::remove_all(root);
  fs::create_directories(root);
  {
    std::ofstream cfg(root / "config.json");
    cfg << R"({"train": {"episodes": 2}})";
  }
  const fs::path run = root / "run";
  if (run_cli("train --config " + quote(root / "config.json") + " --out " + quote(run), root / "train") != 0) {
    throw std::runtime_error("fixture training failed: " + slurp(root / "train" / "stderr.txt"));
  }
  if (run_cli("analyze --run " + quote(run), root / "analyze") != 0) {
    throw std::runtime_error("fixture analysis failed: " + slurp(root / "analyze" / "stderr.txt"));
  }
  return run;
}

/// Validator for the subset of JSON Schema used by docs/api.schema.json:
/// $ref into $defs, type, properties, required, additionalProperties, items,
/// minItems, maxItems, enum, pattern.
class SchemaValidator {
 public:
  explicit SchemaValidator(nlohmann::json root) : root_(std::move(root)) {}

  static SchemaValidator from_file(const std::filesystem::path& p) {
    return SchemaValidator(nlohmann::json::parse(slurp(p)));
  }

  /// Validates `value` against `$defs/<name>`; returns human-readable errors.
  std::vector<std::string> validate(const nlohmann::json& value, const std::string& name) const {
    std::vector<std::string> errors;
    check(value, root_.at("$defs").at(name), "$", errors);
    return errors;
  }

 private:
  nlohmann::json root_;

  const nlohmann::json& resolve(const nlohmann::json& schema) const {
    if (!schema.contains("$ref")) return schema;
    const std::string ref = schema.at("$ref");
    const std::string prefix = "#/$defs/";
    if (ref.rfind(prefix, 0) != 0) throw std::invalid_argument("unsupported $ref " + ref);
    return resolve(root_.at("$defs").at(ref.substr(prefix.size())));
  }

  static bool type_matches(const nlohmann::json& v, const std::string& type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "integer") return v.is_number_integer();
    if (type == "number") return v.is_number();
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    throw std::invalid_argument("unknown schema type " + type);
  }

  void check(const nlohmann::json& v, const nlohmann::json& raw, const std::string& at,
             std::vector<std::string>& errors) const {
    const nlohmann::json& s = resolve(raw);
    if (s.contains("type")) {
      std::vector<std::string> types;
      if (s.at("type").is_array()) {
        types = s.at("type").get<std::vector<std::string>>();
      } else {
        types.push_back(s.at("type").get<std::string>());
      }
      bool ok = false;
      for (const auto& t : types) ok = ok || type_matches(v, t);
      if (!ok) {
        errors.push_back(at + ": expected " + s.at("type").dump() + ", got " + v.type_name());
        return;
      }
    }
    if (s.contains("enum")) {
      bool found = false;
      for (const auto& e : s.at("enum")) found = found || e == v;
      if (!found) errors.push_back(at + ": " + v.dump() + " not in " + s.at("enum").dump());
    }
    if (s.contains("pattern") && v.is_string()) {
      if (!std::regex_search(v.get<std::string>(), std::regex(s.at("pattern").get<std::string>()))) {
        errors.push_back(at + ": " + v.dump() + " does not match " + s.at("pattern").dump());
      }
    }
    if (v.is_object()) {
      if (s.contains("required")) {
        for (const auto& key : s.at("required")) {
          if (!v.contains(key.get<std::string>())) errors.push_back(at + ": missing " + key.get<std::string>());
        }
      }
      const nlohmann::json props = s.value("properties", nlohmann::json::object());
      for (const auto& [key, child] : v.items()) {
        if (props.contains(key)) {
          check(child, props.at(key), at + "." + key, errors);
        } else if (s.contains("additionalProperties")) {
          const auto& extra = s.at("additionalProperties");
          if (extra.is_boolean()) {
            if (!extra.get<bool>()) errors.push_back(at + ": unexpected key " + key);
          } else {
            check(child, extra, at + "." + key, errors);
          }
        }
      }
    }
    if (v.is_array()) {
      if (s.contains("minItems") && v.size() < s.at("minItems").get<std::size_t>()) {
        errors.push_back(at + ": fewer than " + s.at("minItems").dump() + " items");
      }
      if (s.contains("maxItems") && v.size() > s.at("maxItems").get<std::size_t>()) {
        errors.push_back(at + ": more than " + s.at("maxItems").dump() + " items");
      }
      if (s.contains("items")) {
        for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s.at("items"), at + "[" + std::to_string(i) + "]", errors);
      }
    }
  }
};

}  // namespace gridlens::testing
