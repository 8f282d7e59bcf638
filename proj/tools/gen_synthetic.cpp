// Regenerates the bundled synthetic corpus: gen_synthetic [OUT_DIR]
#include <iostream>

#include "sake/synthetic.hpp"

int main(int argc, char** argv) {
  const std::filesystem::path dir = argc > 1 ? argv[1] : "data/synthetic";
  try {
    sake::synthetic::write(dir);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  std::cout << "wrote synthetic corpus to " << dir.string() << '\n';
  return 0;
}
