// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "atck/common.hpp"
#include "atck/config.hpp"

using namespace atck;

TEST_CASE("config: registered defaults") {
  Config c;
  CHECK(c.get_int("codec.depth") == 16);
  CHECK(c.get_int("codec.codebook_size") == 256);
  CHECK(c.get_int("codec.latent_dim") == 64);
  CHECK(c.get_int("lm.n_layers") == 4);
  CHECK(c.get_int("lm.d_model") == 128);
  CHECK(c.get_int("lm.d_ffn") == 352);
  CHECK(c.get_double("codec.beta") == doctest::Approx(0.25));
  CHECK(c.get_double("train.lr") == doctest::Approx(3e-4));
  CHECK(c.get_string("train.init_mode") == "scratch");
  CHECK(c.get_int_list("codec.factors") == std::vector<int>{8, 8, 8});
}

TEST_CASE("config: apply_text with comments, later assignments win") {
  Config c;
  c.apply_text("# a comment\n"
               "codec.depth = 8\n"
               "\n"
               "train.lr=1e-3  # trailing comment\n"
               "codec.depth=4\n");
  CHECK(c.get_int("codec.depth") == 4);
  CHECK(c.get_double("train.lr") == doctest::Approx(1e-3));
}

TEST_CASE("config: unknown keys and malformed values rejected") {
  Config c;
  CHECK_THROWS_AS(c.set("codec.bogus", "1"), Error);
  CHECK_THROWS_AS(c.apply_text("no_such.key=3\n"), Error);
  CHECK_THROWS_AS(c.set("codec.depth", "sixteen"), Error);
  CHECK_THROWS_AS(c.set("train.lr", "1.2.3"), Error);
  CHECK_THROWS_AS(c.apply_text("just a line\n"), Error);
  CHECK_THROWS_AS(c.get_int("train.lr"), Error);       // type mismatch
  CHECK_THROWS_AS(c.get_string("codec.depth"), Error);
  // ints promote to double reads
  CHECK(c.get_double("codec.depth") == doctest::Approx(16.0));
}

TEST_CASE("config: digest is order independent and value sensitive") {
  Config a, b;
  a.set("codec.depth", "8");
  a.set("train.lr", "0.001");
  b.set("train.lr", "0.001");
  b.set("codec.depth", "8");
  CHECK(a.canonical_text() == b.canonical_text());
  CHECK(a.digest_hex() == b.digest_hex());

  Config c = a;
  c.set("codec.depth", "9");
  CHECK(a.digest_hex() != c.digest_hex());

  // the canonical form is sorted, one key=value per line
  std::string text = a.canonical_text();
  size_t first = text.find('\n');
  REQUIRE(first != std::string::npos);
  std::string prev = text.substr(0, first);
  size_t pos = first + 1;
  while (pos < text.size()) {
    size_t next = text.find('\n', pos);
    std::string line = text.substr(pos, next - pos);
    if (!line.empty()) {
      CHECK(prev < line);
      prev = line;
    }
    pos = next + 1;
  }
}

TEST_CASE("config: list parsing") {
  Config c;
  c.set("codec.factors", "4,2,8");
  CHECK(c.get_int_list("codec.factors") == std::vector<int>{4, 2, 8});
  c.set("codec.factors", "4,,8");
  CHECK_THROWS_AS(c.get_int_list("codec.factors"), Error);
  c.set("codec.factors", "");
  CHECK_THROWS_AS(c.get_int_list("codec.factors"), Error);
}
