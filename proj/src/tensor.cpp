#include "tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>

namespace opdf {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

std::size_t Tensor::checked_size(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) {
    require(e >= 1, ErrKind::ExtentMismatch, "zero extent in shape ",
            shape_str(shape));
    require(e == 0 || n <= std::numeric_limits<std::size_t>::max() / e,
            ErrKind::ExtentMismatch, "shape overflow");
    n *= e;
  }
  return n;
}

double Tensor::at(std::span<const std::size_t> idx) const {
  require(idx.size() == order(), ErrKind::ExtentMismatch,
          "index order ", idx.size(), " vs tensor order ", order());
  std::size_t off = 0;
  for (std::size_t a = 0; a < idx.size(); ++a) {
    require(idx[a] < shape_[a], ErrKind::ExtentMismatch, "index out of range");
    off = off * shape_[a] + idx[a];
  }
  return data_[off];
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor reshape(const Tensor& t, Shape new_shape) {
  require(shape_size(new_shape) == t.size(), ErrKind::ExtentMismatch,
          "reshape ", shape_str(t.shape()), " -> ", shape_str(new_shape),
          ": element counts differ");
  return Tensor(std::move(new_shape),
                std::vector<double>(t.data().begin(), t.data().end()));
}

namespace {

void check_permutation(std::span<const std::size_t> axes, std::size_t order) {
  require(axes.size() == order, ErrKind::InvalidPermutation,
          "permutation has ", axes.size(), " entries for order ", order);
  std::vector<bool> seen(order, false);
  for (std::size_t a : axes) {
    require(a < order && !seen[a], ErrKind::InvalidPermutation,
            "axis list is not a permutation of 0..", order ? order - 1 : 0);
    seen[a] = true;
  }
}

std::vector<std::size_t> row_major_strides(const Shape& shape) {
  std::vector<std::size_t> strides(shape.size(), 1);
  for (std::size_t a = shape.size(); a-- > 1;)
    strides[a - 1] = strides[a] * shape[a];
  return strides;
}

}  // namespace

Tensor permute(const Tensor& t, std::span<const std::size_t> axes) {
  check_permutation(axes, t.order());
  if (t.order() <= 1) return t;

  const auto in_strides = row_major_strides(t.shape());
  Shape out_shape(t.order());
  std::vector<std::size_t> step(t.order());  // input stride per output axis
  for (std::size_t p = 0; p < t.order(); ++p) {
    out_shape[p] = t.shape()[axes[p]];
    step[p] = in_strides[axes[p]];
  }

  Tensor out(out_shape);
  std::vector<std::size_t> idx(t.order(), 0);
  std::size_t src = 0;
  const auto in = t.data();
  auto dst = out.data();
  for (std::size_t o = 0; o < out.size(); ++o) {
    dst[o] = in[src];
    // odometer increment over the output index space
    for (std::size_t a = t.order(); a-- > 0;) {
      src += step[a];
      if (++idx[a] < out_shape[a]) break;
      src -= step[a] * out_shape[a];
      idx[a] = 0;
    }
  }
  return out;
}

Tensor unfold(const Tensor& t, std::span<const std::size_t> row_axes,
              std::span<const std::size_t> col_axes) {
  std::vector<std::size_t> axes(row_axes.begin(), row_axes.end());
  axes.insert(axes.end(), col_axes.begin(), col_axes.end());
  check_permutation(axes, t.order());
  std::size_t rows = 1, cols = 1;
  for (std::size_t a : row_axes) rows *= t.extent(a);
  for (std::size_t a : col_axes) cols *= t.extent(a);
  return reshape(permute(t, axes), {rows, cols});
}

Tensor contract(const Tensor& a, const Tensor& b,
                std::span<const std::size_t> axes_a,
                std::span<const std::size_t> axes_b) {
  require(axes_a.size() == axes_b.size(), ErrKind::ExtentMismatch,
          "contraction pairs differ in length");
  for (std::size_t i = 0; i < axes_a.size(); ++i) {
    require(axes_a[i] < a.order() && axes_b[i] < b.order(),
            ErrKind::ExtentMismatch, "contraction axis out of range");
    require(a.extent(axes_a[i]) == b.extent(axes_b[i]), ErrKind::ExtentMismatch,
            "paired extents differ: axis ", axes_a[i], " of ",
            shape_str(a.shape()), " vs axis ", axes_b[i], " of ",
            shape_str(b.shape()));
  }

  auto free_axes = [](const Tensor& t, std::span<const std::size_t> paired) {
    std::vector<bool> used(t.order(), false);
    for (std::size_t a : paired) {
      if (used[a]) fail(ErrKind::ExtentMismatch, "duplicate contraction axis");
      used[a] = true;
    }
    std::vector<std::size_t> free;
    for (std::size_t a = 0; a < t.order(); ++a)
      if (!used[a]) free.push_back(a);
    return free;
  };

  const auto free_a = free_axes(a, axes_a);
  const auto free_b = free_axes(b, axes_b);

  // permute + unfold + matmul: [Fa, K] x [K, Fb]
  Tensor ma = unfold(a, free_a, axes_a);
  Tensor mb = unfold(b, axes_b, free_b);
  Tensor c = matmul(ma, mb);

  Shape out_shape;
  for (std::size_t ax : free_a) out_shape.push_back(a.extent(ax));
  for (std::size_t ax : free_b) out_shape.push_back(b.extent(ax));
  return reshape(c, std::move(out_shape));
}

double frobenius_norm(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v * v;
  return std::sqrt(s);
}

namespace {

Tensor zip(const Tensor& a, const Tensor& b, double (*f)(double, double)) {
  require(a.same_shape(b), ErrKind::ExtentMismatch, "shapes differ: ",
          shape_str(a.shape()), " vs ", shape_str(b.shape()));
  Tensor out(a.shape());
  auto pa = a.data(), pb = b.data();
  auto po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = f(pa[i], pb[i]);
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x + y; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x - y; });
}

Tensor hadamard(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x * y; });
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (double& v : out.data()) v *= c;
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.order() == 2 && b.order() == 2, ErrKind::ExtentMismatch,
          "matmul expects 2-order tensors");
  const std::size_t m = a.extent(0), k = a.extent(1);
  const std::size_t k2 = b.extent(0), n = b.extent(1);
  require(k == k2, ErrKind::ExtentMismatch, "matmul inner extents ", k, " vs ",
          k2);
  Tensor out({m, n});
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* pc = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = pa + i * k;
    double* crow = pc + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = pb + kk * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor transpose(const Tensor& m) {
  require(m.order() == 2, ErrKind::ExtentMismatch, "transpose expects 2-order");
  const std::size_t axes[2] = {1, 0};
  return permute(m, axes);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require(a.same_shape(b), ErrKind::ExtentMismatch, "shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double relative_error(const Tensor& a, const Tensor& b) {
  const double ref = frobenius_norm(b);
  const double err = frobenius_norm(sub(a, b));
  return ref > 0.0 ? err / ref : err;
}

// -- TNSR I/O --------------------------------------------------------------

namespace {

constexpr unsigned char kMagic[4] = {0x54, 0x4E, 0x53, 0x52};  // "TNSR"
constexpr unsigned char kVersion = 0x01;
constexpr unsigned char kDtypeF64LE = 0x00;

void put_u64_le(std::ostream& os, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64_le(std::istream& is) {
  unsigned char buf[8];
  is.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

void put_f64_le(std::ostream& os, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64_le(os, bits);
}

double get_f64_le(std::istream& is) {
  std::uint64_t bits = get_u64_le(is);
  double d;
  std::memcpy(&d, &bits, 8);
  return d;
}

}  // namespace

void write_tnsr(const std::string& path, const Tensor& t) {
  require(t.order() <= 255, ErrKind::FormatError,
          "TNSR supports order <= 255, got ", t.order());
  std::ofstream os(path, std::ios::binary);
  require(os.good(), ErrKind::IoError, "cannot open for write: ", path);
  os.write(reinterpret_cast<const char*>(kMagic), 4);
  os.put(static_cast<char>(kVersion));
  os.put(static_cast<char>(kDtypeF64LE));
  os.put(static_cast<char>(t.order()));
  for (std::size_t e : t.shape()) put_u64_le(os, e);
  for (double v : t.data()) put_f64_le(os, v);
  os.flush();
  require(os.good(), ErrKind::IoError, "write failed: ", path);
}

Tensor read_tnsr(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  require(is.good(), ErrKind::IoError, "cannot open for read: ", path);
  unsigned char magic[4];
  is.read(reinterpret_cast<char*>(magic), 4);
  require(is.good() && std::memcmp(magic, kMagic, 4) == 0, ErrKind::FormatError,
          "not a TNSR file: ", path);
  const int version = is.get();
  require(version == kVersion, ErrKind::FormatError, "unsupported TNSR version ",
          version, " in ", path);
  const int dtype = is.get();
  require(dtype == kDtypeF64LE, ErrKind::FormatError, "unsupported TNSR dtype ",
          dtype, " in ", path);
  const int order = is.get();
  require(order >= 0, ErrKind::FormatError, "truncated TNSR header: ", path);
  Shape shape(static_cast<std::size_t>(order));
  for (auto& e : shape) {
    e = static_cast<std::size_t>(get_u64_le(is));
    require(is.good() && e >= 1, ErrKind::FormatError, "bad TNSR extent in ",
            path);
  }
  const std::size_t count = shape_size(shape);
  std::vector<double> data(count);
  for (auto& v : data) v = get_f64_le(is);
  require(is.good(), ErrKind::FormatError, "truncated TNSR payload: ", path);
  is.get();
  require(is.eof(), ErrKind::FormatError, "trailing bytes in TNSR file: ", path);
  Tensor t(std::move(shape), std::move(data));
  require(t.all_finite(), ErrKind::FormatError, "non-finite values in ", path);
  return t;
}

}  // namespace opdf
