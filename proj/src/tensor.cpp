#include "oasislab/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

namespace oasis {

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void Tensor::dump(std::ostream& os) const {
  os << "shape:";
  for (auto e : shape_) os << ' ' << e;
  os << '\n';
  char buf[40];
  for (std::size_t i = 0; i < data_.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g", data_[i]);
    os << buf;
    os << (((i + 1) % 8 == 0) ? '\n' : ' ');
  }
  if (data_.size() % 8 != 0) os << '\n';
}

Tensor Tensor::load(std::istream& is) {
  std::string header;
  std::getline(is, header);
  std::istringstream hs(header);
  std::string tag;
  hs >> tag;
  require(tag == "shape:", ErrorKind::Input, "tensor dump missing shape header");
  std::vector<std::int64_t> shape;
  std::int64_t e;
  while (hs >> e) shape.push_back(e);
  require(!shape.empty(), ErrorKind::Input, "tensor dump has empty shape");
  Tensor t(shape);
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    double v;
    require(static_cast<bool>(is >> v), ErrorKind::Input,
            "tensor dump truncated");
    t[i] = v;
  }
  return t;
}

}  // namespace oasis
