// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
#include <cstdio>
int main() { std::puts("placeholder"); return 0; }
