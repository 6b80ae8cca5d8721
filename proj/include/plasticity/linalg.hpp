#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "plasticity/errors.hpp"
#include "plasticity/tensor.hpp"

namespace plasticity {

namespace detail {

inline void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* name) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + name + " must have rank " + std::to_string(rank) +
                         ", got shape " + shape_string(t.shape()));
  }
}

}  // namespace detail

/// Row-major matrix product with a fixed (i, k, j) summation order.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul", "lhs");
  detail::require_rank(b, 2, "matmul", "rhs");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions disagree for " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* pc = c.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* row = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = pa[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += aip * brow[j];
    }
  }
  return c;
}

/// aᵀ·b without materializing the transpose.
inline Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul_tn", "lhs");
  detail::require_rank(b, 2, "matmul_tn", "rhs");
  if (a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: row counts disagree for " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()));
  }
  const std::size_t r = a.dim(0), m = a.dim(1), n = b.dim(1);
  Tensor c({m, n});
  double* pc = c.data();
  for (std::size_t row = 0; row < r; ++row) {
    const double* arow = a.data() + row * m;
    const double* brow = b.data() + row * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double ai = arow[i];
      if (ai == 0.0) continue;
      double* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ai * brow[j];
    }
  }
  return c;
}

/// a·bᵀ without materializing the transpose.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  detail::require_rank(a, 2, "matmul_nt", "lhs");
  detail::require_rank(b, 2, "matmul_nt", "rhs");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: column counts disagree for " + shape_string(a.shape()) +
                         " and " + shape_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor c({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c.at(i, j) = s;
    }
  }
  return c;
}

/// Valid (unpadded), stride-1 cross-correlation of N×C×H×W input with F×C×K×K
/// kernels, plus a per-output-channel bias.
inline Tensor conv2d(const Tensor& input, const Tensor& kernels, const Tensor& bias) {
  detail::require_rank(input, 4, "conv2d", "input");
  detail::require_rank(kernels, 4, "conv2d", "kernels");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  if (kernels.dim(1) != c) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) + " has " + std::to_string(c) +
                         " channels but kernels " + shape_string(kernels.shape()) + " expect " +
                         std::to_string(kernels.dim(1)));
  }
  if (h < kh || w < kw) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) +
                         " is smaller than kernels " + shape_string(kernels.shape()));
  }
  if (bias.size() != f) {
    throw DimensionError("conv2d: bias " + shape_string(bias.shape()) + " does not match " +
                         std::to_string(f) + " output channels");
  }
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  Tensor out({n, f, oh, ow});
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < f; ++o) {
      double* plane = out.data() + ((s * f + o) * oh) * ow;
      std::fill(plane, plane + oh * ow, bias[o]);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* in = input.data() + ((s * c + ch) * h) * w;
        const double* ker = kernels.data() + ((o * c + ch) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double kv = ker[ky * kw + kx];
            for (std::size_t y = 0; y < oh; ++y) {
              const double* irow = in + (y + ky) * w + kx;
              double* orow = plane + y * ow;
              for (std::size_t x = 0; x < ow; ++x) orow[x] += kv * irow[x];
            }
          }
        }
      }
    }
  }
  return out;
}

struct Conv2dGrads {
  Tensor input;
  Tensor kernels;
  Tensor bias;
};

/// Gradients of conv2d given dL/d(output).
inline Conv2dGrads conv2d_backward(const Tensor& input, const Tensor& kernels, const Tensor& grad_out) {
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  const std::size_t f = kernels.dim(0), kh = kernels.dim(2), kw = kernels.dim(3);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  if (grad_out.shape() != Shape{n, f, oh, ow}) {
    throw DimensionError("conv2d_backward: grad_out " + shape_string(grad_out.shape()) +
                         " does not match forward output shape");
  }
  Conv2dGrads g{Tensor::zeros_like(input), Tensor::zeros_like(kernels), Tensor({f})};
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t o = 0; o < f; ++o) {
      const double* go = grad_out.data() + ((s * f + o) * oh) * ow;
      double bsum = 0.0;
      for (std::size_t i = 0; i < oh * ow; ++i) bsum += go[i];
      g.bias[o] += bsum;
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* in = input.data() + ((s * c + ch) * h) * w;
        double* gin = g.input.data() + ((s * c + ch) * h) * w;
        const double* ker = kernels.data() + ((o * c + ch) * kh) * kw;
        double* gker = g.kernels.data() + ((o * c + ch) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double kv = ker[ky * kw + kx];
            double acc = 0.0;
            for (std::size_t y = 0; y < oh; ++y) {
              const double* irow = in + (y + ky) * w + kx;
              double* girow = gin + (y + ky) * w + kx;
              const double* grow = go + y * ow;
              for (std::size_t x = 0; x < ow; ++x) {
                acc += grow[x] * irow[x];
                girow[x] += grow[x] * kv;
              }
            }
            gker[ky * kw + kx] += acc;
          }
        }
      }
    }
  }
  return g;
}

struct PoolResult {
  Tensor output;
  /// Flat input index of the selected element, one per output element.
  std::vector<std::size_t> argmax;
};

/// 2×2 max pool with stride 2; trailing odd rows/columns are dropped.
/// Ties go to the first element in row-major window order.
inline PoolResult maxpool2(const Tensor& input) {
  detail::require_rank(input, 4, "maxpool2", "input");
  const std::size_t n = input.dim(0), c = input.dim(1), h = input.dim(2), w = input.dim(3);
  if (h < 2 || w < 2) {
    throw DimensionError("maxpool2: spatial size of " + shape_string(input.shape()) + " is below 2x2");
  }
  const std::size_t oh = h / 2, ow = w / 2;
  PoolResult r{Tensor({n, c, oh, ow}), std::vector<std::size_t>(n * c * oh * ow)};
  std::size_t out_idx = 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x, ++out_idx) {
        std::size_t best = base + (2 * y) * w + 2 * x;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * w + 2 * x + dx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        r.output[out_idx] = input[best];
        r.argmax[out_idx] = best;
      }
    }
  }
  return r;
}

inline Tensor maxpool2_backward(const Tensor& grad_out, const std::vector<std::size_t>& argmax,
                                const Shape& input_shape) {
  if (grad_out.size() != argmax.size()) {
    throw DimensionError("maxpool2_backward: grad_out " + shape_string(grad_out.shape()) +
                         " does not match " + std::to_string(argmax.size()) + " pooled indices");
  }
  Tensor g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[argmax[i]] += grad_out[i];
  return g;
}

struct SvdOptions {
  double tolerance = 1e-12;
  std::size_t max_sweeps = 100;
};

/// Singular values of an m×n matrix, descending, via one-sided (Hestenes)
/// Jacobi rotations on the columns of the taller orientation.
inline std::vector<double> singular_values(const Tensor& a, SvdOptions opts = {}) {
  detail::require_rank(a, 2, "singular_values", "matrix");
  if (!a.all_finite()) throw NumericalError("singular_values: non-finite matrix entry", 0);
  const bool transpose = a.dim(0) < a.dim(1);
  const std::size_t rows = transpose ? a.dim(1) : a.dim(0);
  const std::size_t cols = transpose ? a.dim(0) : a.dim(1);

  // Column-major working copy: column j occupies [j*rows, (j+1)*rows).
  std::vector<double> u(rows * cols);
  for (std::size_t i = 0; i < a.dim(0); ++i) {
    for (std::size_t j = 0; j < a.dim(1); ++j) {
      if (transpose) {
        u[i * rows + j] = a.at(i, j);
      } else {
        u[j * rows + i] = a.at(i, j);
      }
    }
  }

  auto dot = [&](std::size_t p, std::size_t q) {
    const double* x = u.data() + p * rows;
    const double* y = u.data() + q * rows;
    double s = 0.0;
    for (std::size_t i = 0; i < rows; ++i) s += x[i] * y[i];
    return s;
  };

  std::vector<double> norms(cols);
  double frob2 = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    norms[j] = dot(j, j);
    frob2 += norms[j];
  }
  // Columns at round-off level relative to the whole matrix are treated as zero.
  const double negligible = frob2 * 1e-30;

  bool converged = cols < 2;
  std::size_t sweep = 0;
  while (!converged) {
    if (sweep == opts.max_sweeps) {
      throw NumericalError("singular_values: Jacobi sweeps did not converge", sweep);
    }
    ++sweep;
    double off = 0.0;
    for (std::size_t p = 0; p + 1 < cols; ++p) {
      for (std::size_t q = p + 1; q < cols; ++q) {
        const double alpha = norms[p];
        const double beta = norms[q];
        if (alpha <= negligible || beta <= negligible) continue;
        const double gamma = dot(p, q);
        const double rel = std::abs(gamma) / std::sqrt(alpha * beta);
        off = std::max(off, rel);
        if (rel <= opts.tolerance) continue;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double cs = 1.0 / std::sqrt(1.0 + t * t);
        const double sn = cs * t;
        double* x = u.data() + p * rows;
        double* y = u.data() + q * rows;
        for (std::size_t i = 0; i < rows; ++i) {
          const double xi = x[i];
          const double yi = y[i];
          x[i] = cs * xi - sn * yi;
          y[i] = sn * xi + cs * yi;
        }
        norms[p] = dot(p, p);
        norms[q] = dot(q, q);
      }
    }
    converged = off <= opts.tolerance;
  }

  std::vector<double> sv(cols);
  for (std::size_t j = 0; j < cols; ++j) sv[j] = std::sqrt(norms[j]);
  std::sort(sv.begin(), sv.end(), std::greater<>());
  return sv;
}

}  // namespace plasticity
