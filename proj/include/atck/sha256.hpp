// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace atck {

using Digest = std::array<uint8_t, 32>;

Digest sha256(const void* data, size_t len);
Digest sha256(const std::string& s);
Digest sha256(const std::vector<uint8_t>& v);

std::string digest_hex(const Digest& d);

}  // namespace atck
