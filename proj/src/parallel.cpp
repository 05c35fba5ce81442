#include "charlab/parallel.hpp"

#include <cstdlib>
#include <string>

namespace charlab {

int default_jobs() {
  if (const char* env = std::getenv("CHARLAB_JOBS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
}

}  // namespace charlab
