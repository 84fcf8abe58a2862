// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include "atck/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "atck/common.hpp"

namespace atck {
namespace {

struct Spec {
  const char* key;
  Config::Type type;
  const char* def;
};

// The full key registry. String lists are comma separated.
const Spec kRegistry[] = {
    {"corpus.n_items", Config::Type::Int, "64"},
    {"corpus.vocab_size", Config::Type::Int, "16"},
    {"corpus.symbols_per_item", Config::Type::Int, "4"},
    {"corpus.segment_s", Config::Type::Double, "0.5"},
    {"corpus.sample_rate", Config::Type::Int, "16000"},
    {"corpus.noise_db", Config::Type::Double, "-20"},

    {"codec.depth", Config::Type::Int, "16"},
    {"codec.codebook_size", Config::Type::Int, "256"},
    {"codec.latent_dim", Config::Type::Int, "64"},
    {"codec.factors", Config::Type::String, "8,8,8"},
    {"codec.channels", Config::Type::String, "24,32,48"},
    {"codec.decoder_width_mult", Config::Type::Int, "2"},
    {"codec.lambda_wav", Config::Type::Double, "1"},
    {"codec.lambda_stft", Config::Type::Double, "1"},
    {"codec.beta", Config::Type::Double, "0.25"},
    {"codec.ema_gamma", Config::Type::Double, "0.99"},
    {"codec.usage_threshold", Config::Type::Double, "2"},

    {"lm.n_layers", Config::Type::Int, "4"},
    {"lm.d_model", Config::Type::Int, "128"},
    {"lm.n_heads", Config::Type::Int, "4"},
    {"lm.n_kv_heads", Config::Type::Int, "4"},
    {"lm.d_ffn", Config::Type::Int, "352"},
    {"lm.max_seq_len", Config::Type::Int, "2048"},
    {"lm.rope_base", Config::Type::Double, "10000"},
    {"lm.max_duration_s", Config::Type::Int, "16"},
    // 0 means "use codec.depth"; the ablation trains shallower refiners
    {"lm.acoustic_depth", Config::Type::Int, "0"},

    {"train.batch", Config::Type::Int, "16"},
    {"train.steps", Config::Type::Int, "3000"},
    {"train.lr", Config::Type::Double, "3e-4"},
    {"train.warmup", Config::Type::Int, "100"},
    {"train.seed", Config::Type::Int, "0"},
    {"train.p0", Config::Type::Double, "0.25"},
    {"train.eval_every", Config::Type::Int, "50"},
    {"train.clip_frames", Config::Type::Int, "64"},
    {"train.init_mode", Config::Type::String, "scratch"},
    {"train.task1_min_layer", Config::Type::Int, "2"},
    // digest of the codec an LM was trained against; stamped by the trainer
    {"train.codec_digest", Config::Type::String, ""},

    {"gen.temperature", Config::Type::Double, "0.9"},
    {"gen.top_k", Config::Type::Int, "64"},
    // 0 means the full depth the checkpoints support
    {"gen.depth", Config::Type::Int, "0"},
};

const Spec* find_spec(const std::string& key) {
  for (const Spec& s : kRegistry)
    if (key == s.key) return &s;
  return nullptr;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int64_t parse_int(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  long long r = std::strtoll(v.c_str(), &end, 10);
  check(errno == 0 && end && *end == '\0' && !v.empty(),
        "config: bad integer for " + key + ": '" + v + "'");
  return r;
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  double r = std::strtod(v.c_str(), &end);
  check(errno == 0 && end && *end == '\0' && !v.empty(),
        "config: bad number for " + key + ": '" + v + "'");
  return r;
}

std::string format_double(double d) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", d);
  return buf;
}

}  // namespace

Config::Config() {
  for (const Spec& s : kRegistry) {
    Value v;
    v.type = s.type;
    switch (s.type) {
      case Type::Int: v.i = parse_int(s.key, s.def); break;
      case Type::Double: v.d = parse_double(s.key, s.def); break;
      case Type::String: v.s = s.def; break;
    }
    values_[s.key] = std::move(v);
  }
}

const std::vector<std::string>& Config::known_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const Spec& s : kRegistry) k.push_back(s.key);
    return k;
  }();
  return keys;
}

Config::Type Config::type_of(const std::string& key) {
  const Spec* s = find_spec(key);
  check(s != nullptr, "config: unknown key '" + key + "'");
  return s->type;
}

void Config::set(const std::string& key, const std::string& value) {
  const Spec* s = find_spec(key);
  check(s != nullptr, "config: unknown key '" + key + "'");
  Value& v = values_[key];
  switch (s->type) {
    case Type::Int: v.i = parse_int(key, value); break;
    case Type::Double: v.d = parse_double(key, value); break;
    case Type::String: v.s = value; break;
  }
}

void Config::apply_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    check(eq != std::string::npos,
          "config: line " + std::to_string(lineno) + " is not key=value");
    set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void Config::apply_file(const std::string& path) {
  std::ifstream f(path);
  check(f.good(), "config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  apply_text(ss.str());
}

const Config::Value& Config::at(const std::string& key) const {
  auto it = values_.find(key);
  check(it != values_.end(), "config: unknown key '" + key + "'");
  return it->second;
}

int64_t Config::get_int(const std::string& key) const {
  const Value& v = at(key);
  check(v.type == Type::Int, "config: " + key + " is not an integer");
  return v.i;
}

double Config::get_double(const std::string& key) const {
  const Value& v = at(key);
  if (v.type == Type::Int) return double(v.i);
  check(v.type == Type::Double, "config: " + key + " is not a number");
  return v.d;
}

const std::string& Config::get_string(const std::string& key) const {
  const Value& v = at(key);
  check(v.type == Type::String, "config: " + key + " is not a string");
  return v.s;
}

std::vector<int> Config::get_int_list(const std::string& key) const {
  const std::string& s = get_string(key);
  std::vector<int> out;
  std::string cur;
  for (size_t i = 0; i <= s.size(); ++i) {
    if (i == s.size() || s[i] == ',') {
      check(!cur.empty(), "config: empty element in list " + key);
      out.push_back(int(parse_int(key, trim(cur))));
      cur.clear();
    } else {
      cur.push_back(s[i]);
    }
  }
  check(!out.empty(), "config: empty list " + key);
  return out;
}

std::string Config::canonical_text() const {
  // std::map iterates keys in sorted order, which is the canonical order
  std::ostringstream os;
  for (const auto& [key, v] : values_) {
    os << key << "=";
    switch (v.type) {
      case Type::Int: os << v.i; break;
      case Type::Double: os << format_double(v.d); break;
      case Type::String: os << v.s; break;
    }
    os << "\n";
  }
  return os.str();
}

Digest Config::digest() const { return sha256(canonical_text()); }

std::string Config::digest_hex() const { return atck::digest_hex(digest()); }

}  // namespace atck
