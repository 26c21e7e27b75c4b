// Copyright 2026 The dysco Authors
// SPDX-License-Identifier: Apache-2.0

#include <iostream>

#include "cli.hpp"
#include "dysco/error.hpp"

int main(int argc, char** argv) {
  using namespace dysco::cli;
  CLI::App app{"dysco: decoding with dynamic attention scaling"};
  app.require_subcommand(1);
  register_task_commands(app);
  register_model_commands(app);
  register_eval_commands(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  } catch (const ExitRequest& e) {
    return e.code;
  } catch (const dysco::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case dysco::ErrorKind::kValidation:
      case dysco::ErrorKind::kIo:
      case dysco::ErrorKind::kFormat:
        return kExitUsage;
      default:
        return kExitFailure;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitOk;
}
