// Built against the library with the distillation path compiled out. Trains
// a default model with lambda = 0 and dumps every parameter as raw bytes, so
// the acceptance run can compare it with the regular build.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

#include "glad/train.hpp"

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: glad_nodistill_probe <steps> <out>\n";
    return 1;
  }
  glad::RunConfig cfg;
  cfg.model.lambda = 0.0;
  cfg.train.steps = std::atoi(argv[1]);
  glad::Trainer<float> trainer(cfg);
  trainer.run(static_cast<std::uint64_t>(cfg.train.steps));

  std::ofstream out(argv[2], std::ios::binary);
  for (const auto& [name, t] : trainer.model().named_parameters()) {
    out << name << '\n';
    out.write(reinterpret_cast<const char*>(t.data().data()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  }
  return out ? 0 : 2;
}
