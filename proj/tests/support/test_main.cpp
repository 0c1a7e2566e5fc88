// Copyright 2026 The fbitrain Authors
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT
#include <doctest.h>

#include "fbi/runtime.hpp"

int main(int argc, char** argv) {
  fbi::keep_freed_memory();
  doctest::Context context;
  context.applyCommandLine(argc, argv);
  return context.run();
}
