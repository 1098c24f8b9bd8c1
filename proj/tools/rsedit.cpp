// Copyright (C) 2026 The rsedit Authors
// SPDX-License-Identifier: Apache-2.0

#include "rsedit/cli.hpp"

int main(int argc, char** argv) { return rsedit::run_cli(argc, argv); }
