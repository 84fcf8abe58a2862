// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "atck/sha256.hpp"

namespace atck {

// Flat key=value configuration with section-prefixed keys (codec.depth=16).
// Every key has a registered type and default; unknown keys are rejected.
// The canonical serialization (sorted keys, %.9g floats) feeds the config
// digest that checkpoints embed.
class Config {
 public:
  enum class Type : uint8_t { Int, Double, String };

  Config();  // defaults for every registered key

  static const std::vector<std::string>& known_keys();
  static Type type_of(const std::string& key);

  // Parses "key=value" text (one per line, '#' comments). Later assignments
  // win. Unknown keys or malformed values raise Error.
  void apply_text(const std::string& text);
  void apply_file(const std::string& path);
  void set(const std::string& key, const std::string& value);

  int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  // Comma-separated int list stored in a string key.
  std::vector<int> get_int_list(const std::string& key) const;

  std::string canonical_text() const;
  Digest digest() const;
  std::string digest_hex() const;

 private:
  struct Value {
    Type type;
    int64_t i = 0;
    double d = 0.0;
    std::string s;
  };
  const Value& at(const std::string& key) const;
  std::map<std::string, Value> values_;
};

}  // namespace atck
