#pragma once

// Minimal JSON Schema checker covering the keywords used in docs/schemas:
// type, properties, required, additionalProperties (false), items,
// minItems, maxItems, enum, const, minimum, maximum, exclusiveMinimum and
// $ref to a sibling schema file.

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace tafe::schema {

using nlohmann::json;

inline json load(const std::filesystem::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return json::parse(ss.str());
}

inline bool type_matches(const json& v, const std::string& t) {
    if (t == "object") return v.is_object();
    if (t == "array") return v.is_array();
    if (t == "string") return v.is_string();
    if (t == "boolean") return v.is_boolean();
    if (t == "null") return v.is_null();
    if (t == "integer") return v.is_number_integer();
    if (t == "number") return v.is_number();
    return false;
}

inline void check(const json& v, const json& s, const std::filesystem::path& dir, const std::string& at,
                  std::vector<std::string>& errors) {
    if (s.contains("$ref")) {
        check(v, load(dir / s["$ref"].get<std::string>()), dir, at, errors);
        return;
    }
    if (s.contains("type")) {
        bool ok = false;
        if (s["type"].is_array()) {
            for (const auto& t : s["type"]) ok = ok || type_matches(v, t.get<std::string>());
        } else {
            ok = type_matches(v, s["type"].get<std::string>());
        }
        if (!ok) {
            errors.push_back(at + ": expected type " + s["type"].dump() + ", got " + v.dump());
            return;
        }
    }
    if (s.contains("const") && v != s["const"]) errors.push_back(at + ": expected const " + s["const"].dump());
    if (s.contains("enum")) {
        bool found = false;
        for (const auto& e : s["enum"]) found = found || e == v;
        if (!found) errors.push_back(at + ": " + v.dump() + " not in enum");
    }
    if (v.is_number()) {
        const double x = v.get<double>();
        if (s.contains("minimum") && x < s["minimum"].get<double>()) errors.push_back(at + ": below minimum");
        if (s.contains("maximum") && x > s["maximum"].get<double>()) errors.push_back(at + ": above maximum");
        if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) {
            errors.push_back(at + ": not above exclusiveMinimum");
        }
    }
    if (v.is_array()) {
        if (s.contains("minItems") && v.size() < s["minItems"].get<std::size_t>()) errors.push_back(at + ": too few items");
        if (s.contains("maxItems") && v.size() > s["maxItems"].get<std::size_t>()) errors.push_back(at + ": too many items");
        if (s.contains("items")) {
            for (std::size_t i = 0; i < v.size(); ++i) check(v[i], s["items"], dir, at + "[" + std::to_string(i) + "]", errors);
        }
    }
    if (v.is_object()) {
        if (s.contains("required")) {
            for (const auto& r : s["required"]) {
                if (!v.contains(r.get<std::string>())) errors.push_back(at + ": missing " + r.get<std::string>());
            }
        }
        const json props = s.value("properties", json::object());
        for (const auto& [key, value] : v.items()) {
            if (props.contains(key)) {
                check(value, props[key], dir, at + "." + key, errors);
            } else if (s.contains("additionalProperties") && s["additionalProperties"] == false) {
                errors.push_back(at + ": unexpected key " + key);
            }
        }
    }
}

// Returns the list of violations; empty means valid.
inline std::vector<std::string> validate(const json& doc, const std::filesystem::path& schema_file) {
    std::vector<std::string> errors;
    check(doc, load(schema_file), schema_file.parent_path(), "$", errors);
    return errors;
}

}  // namespace tafe::schema
