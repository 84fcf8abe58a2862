// Copyright 2026 the atck authors
// SPDX-License-Identifier: Apache-2.0
int main() { return 0; }
