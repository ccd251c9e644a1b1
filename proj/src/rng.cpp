#include "adpgcn/rng.hpp"

#include <sstream>

#include "adpgcn/errors.hpp"

namespace adpgcn {

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (!is) throw Error("invalid RNG state");
}

}  // namespace adpgcn
