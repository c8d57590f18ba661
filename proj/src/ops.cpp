// SPDX-License-Identifier: Apache-2.0
#include "avsync/ops.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "avsync/error.hpp"

namespace avsync {
namespace {

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                         ", got " + shape_str(t.shape()));
  }
}

struct ConvGeometry {
  std::size_t T, H, W, cin;
  std::size_t kt, kh, kw, cout;
  std::size_t To, Ho, Wo;
  Conv3dOptions opts;
};

ConvGeometry conv_geometry(const Tensor& input, const Tensor& kernel, const Tensor& bias,
                           const Conv3dOptions& opts) {
  require_rank(input, 4, "conv3d", "input");
  require_rank(kernel, 5, "conv3d", "kernel");
  require_rank(bias, 1, "conv3d", "bias");
  ConvGeometry g{};
  g.T = input.extent(0);
  g.H = input.extent(1);
  g.W = input.extent(2);
  g.cin = input.extent(3);
  g.kt = kernel.extent(0);
  g.kh = kernel.extent(1);
  g.kw = kernel.extent(2);
  g.cout = kernel.extent(4);
  g.opts = opts;
  if (kernel.extent(3) != g.cin) {
    throw DimensionError("conv3d: kernel expects " + std::to_string(kernel.extent(3)) +
                         " input channels, input " + shape_str(input.shape()) + " has " +
                         std::to_string(g.cin));
  }
  if (bias.extent(0) != g.cout) {
    throw DimensionError("conv3d: bias has " + std::to_string(bias.extent(0)) + " entries, kernel has " +
                         std::to_string(g.cout) + " output channels");
  }
  const std::array<std::size_t, 3> in{g.T, g.H, g.W};
  const std::array<std::size_t, 3> k{g.kt, g.kh, g.kw};
  std::array<std::size_t, 3> out{};
  static constexpr const char* kAxis[] = {"time", "height", "width"};
  for (int a = 0; a < 3; ++a) {
    if (opts.stride[a] == 0) throw DimensionError("conv3d: stride must be at least 1");
    const std::size_t padded = in[a] + 2 * opts.pad[a];
    if (k[a] > padded) {
      throw DimensionError(std::string("conv3d: kernel extent ") + std::to_string(k[a]) + " exceeds padded " +
                           kAxis[a] + " extent " + std::to_string(padded));
    }
    out[a] = (padded - k[a]) / opts.stride[a] + 1;
  }
  g.To = out[0];
  g.Ho = out[1];
  g.Wo = out[2];
  return g;
}

// Taps of one output cell that land inside the input, per axis [lo, hi),
// plus the input coordinate of tap 0 (may be negative).
struct TapWindow {
  std::size_t lo[3], hi[3];
  std::ptrdiff_t base[3];
};

template <typename Fn>
void for_each_output(const ConvGeometry& g, Fn&& fn) {
  const std::size_t n[3] = {g.T, g.H, g.W};
  const std::size_t k[3] = {g.kt, g.kh, g.kw};
  const std::size_t o[3] = {g.To, g.Ho, g.Wo};
  // per-axis windows depend only on the output coordinate along that axis
  std::vector<std::size_t> wlo[3], whi[3];
  std::vector<std::ptrdiff_t> wbase[3];
  for (int a = 0; a < 3; ++a) {
    wlo[a].resize(o[a]);
    whi[a].resize(o[a]);
    wbase[a].resize(o[a]);
    for (std::size_t i = 0; i < o[a]; ++i) {
      const std::ptrdiff_t b =
          static_cast<std::ptrdiff_t>(i * g.opts.stride[a]) - static_cast<std::ptrdiff_t>(g.opts.pad[a]);
      wbase[a][i] = b;
      wlo[a][i] = b < 0 ? static_cast<std::size_t>(-b) : 0;
      const std::ptrdiff_t end = static_cast<std::ptrdiff_t>(n[a]) - b;
      whi[a][i] = end <= 0 ? 0 : std::min(k[a], static_cast<std::size_t>(end));
    }
  }
  TapWindow w{};
  for (std::size_t to = 0; to < g.To; ++to) {
    w.lo[0] = wlo[0][to];
    w.hi[0] = whi[0][to];
    w.base[0] = wbase[0][to];
    for (std::size_t ho = 0; ho < g.Ho; ++ho) {
      w.lo[1] = wlo[1][ho];
      w.hi[1] = whi[1][ho];
      w.base[1] = wbase[1][ho];
      for (std::size_t wo = 0; wo < g.Wo; ++wo) {
        w.lo[2] = wlo[2][wo];
        w.hi[2] = whi[2][wo];
        w.base[2] = wbase[2][wo];
        fn((to * g.Ho + ho) * g.Wo + wo, w);
      }
    }
  }
}

// Calls fn(tap, in_cell) for the in-bounds taps of one window in canonical
// (dt, dh, dw) row-major order.
template <typename Fn>
inline void for_each_tap(const ConvGeometry& g, const TapWindow& w, Fn&& fn) {
  for (std::size_t dt = w.lo[0]; dt < w.hi[0]; ++dt) {
    const std::size_t ti = static_cast<std::size_t>(w.base[0] + static_cast<std::ptrdiff_t>(dt));
    for (std::size_t dh = w.lo[1]; dh < w.hi[1]; ++dh) {
      const std::size_t hi = static_cast<std::size_t>(w.base[1] + static_cast<std::ptrdiff_t>(dh));
      const std::size_t row = (ti * g.H + hi) * g.W;
      const std::size_t tap_row = (dt * g.kh + dh) * g.kw;
      for (std::size_t dw = w.lo[2]; dw < w.hi[2]; ++dw) {
        fn(tap_row + dw, row + static_cast<std::size_t>(w.base[2] + static_cast<std::ptrdiff_t>(dw)));
      }
    }
  }
}

// One block of R output cells along W whose W windows are complete, with
// compile-time channel counts so the accumulators stay in registers.
template <std::size_t CI, std::size_t CO, std::size_t R>
inline void forward_block_fixed(const ConvGeometry& g, const TapWindow& w, const double* __restrict x,
                                const double* __restrict k, const double* __restrict b, double* __restrict out) {
  const std::size_t sw = g.opts.stride[2];
  double acc[R][CO];
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t co = 0; co < CO; ++co) acc[r][co] = b[co];
  for (std::size_t dt = w.lo[0]; dt < w.hi[0]; ++dt) {
    const std::size_t ti = static_cast<std::size_t>(w.base[0] + static_cast<std::ptrdiff_t>(dt));
    for (std::size_t dh = w.lo[1]; dh < w.hi[1]; ++dh) {
      const std::size_t hi = static_cast<std::size_t>(w.base[1] + static_cast<std::ptrdiff_t>(dh));
      const double* xrow = x + ((ti * g.H + hi) * g.W + static_cast<std::size_t>(w.base[2])) * CI;
      const double* krow = k + (dt * g.kh + dh) * g.kw * CI * CO;
      for (std::size_t dw = 0; dw < g.kw; ++dw) {
        const double* kt = krow + dw * CI * CO;
        for (std::size_t ci = 0; ci < CI; ++ci) {
          for (std::size_t r = 0; r < R; ++r) {
            const double xv = xrow[(r * sw + dw) * CI + ci];
            for (std::size_t co = 0; co < CO; ++co) acc[r][co] += xv * kt[ci * CO + co];
          }
        }
      }
    }
  }
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t co = 0; co < CO; ++co) out[r * CO + co] = acc[r][co];
}

// CI/CO > 0 fix the channel counts at compile time so the channel loops
// unroll into registers; 0 selects the general path.
template <std::size_t CI, std::size_t CO>
void conv3d_forward_impl(const ConvGeometry& g, const double* x, const double* k, const double* b, double* o) {
  constexpr std::size_t R = 4;  // output cells along W computed together
  const std::size_t cin = CI ? CI : g.cin;
  const std::size_t cout = CO ? CO : g.cout;
  std::vector<double> dynamic(CO ? 0 : R * cout);
  double fixed[CO ? R * CO : 1];
  double* acc = CO ? fixed : dynamic.data();
  const std::size_t sw = g.opts.stride[2];
  std::size_t run = 0;  // cells of the current row already written by a block
  for_each_output(g, [&](std::size_t out_cell, const TapWindow& w) {
    if (run > 0) {
      --run;
      return;
    }
    const std::size_t wo = out_cell % g.Wo;
    // a block needs R cells of this row whose W windows are all complete
    const std::ptrdiff_t last_base = w.base[2] + static_cast<std::ptrdiff_t>((R - 1) * sw);
    if (wo + R <= g.Wo && w.lo[2] == 0 && w.base[2] >= 0 &&
        last_base + static_cast<std::ptrdiff_t>(g.kw) <= static_cast<std::ptrdiff_t>(g.W)) {
      run = R - 1;
      if constexpr (CO > 0) {
        forward_block_fixed<CI, CO, R>(g, w, x, k, b, o + out_cell * cout);
        return;
      }
      for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t co = 0; co < cout; ++co) acc[r * cout + co] = b[co];
      }
      for (std::size_t dt = w.lo[0]; dt < w.hi[0]; ++dt) {
        const std::size_t ti = static_cast<std::size_t>(w.base[0] + static_cast<std::ptrdiff_t>(dt));
        for (std::size_t dh = w.lo[1]; dh < w.hi[1]; ++dh) {
          const std::size_t hi = static_cast<std::size_t>(w.base[1] + static_cast<std::ptrdiff_t>(dh));
          const double* xrow = x + ((ti * g.H + hi) * g.W + static_cast<std::size_t>(w.base[2])) * cin;
          for (std::size_t dw = 0; dw < g.kw; ++dw) {
            const double* kt = k + ((dt * g.kh + dh) * g.kw + dw) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double* kr = kt + ci * cout;
              for (std::size_t r = 0; r < R; ++r) {
                const double xv = xrow[(r * sw + dw) * cin + ci];
                for (std::size_t co = 0; co < cout; ++co) acc[r * cout + co] += xv * kr[co];
              }
            }
          }
        }
      }
      std::copy(acc, acc + R * cout, o + out_cell * cout);
      return;
    }
    for (std::size_t co = 0; co < cout; ++co) acc[co] = b[co];
    for_each_tap(g, w, [&](std::size_t tap, std::size_t in_cell) {
      const double* xc = x + in_cell * cin;
      const double* kt = k + tap * cin * cout;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double xv = xc[ci];
        if (xv == 0.0) continue;
        const double* kr = kt + ci * cout;
        for (std::size_t co = 0; co < cout; ++co) acc[co] += xv * kr[co];
      }
    });
    std::copy(acc, acc + cout, o + out_cell * cout);
  });
}

// Backward counterpart of forward_block_fixed. `kt` is the kernel with the
// channel axes swapped ([tap][co][ci]); `gl` holds the R output gradients.
template <std::size_t CI, std::size_t CO, std::size_t R>
inline void backward_block_fixed(const ConvGeometry& g, const TapWindow& w, const double* __restrict x,
                                 const double* __restrict kt, const double* __restrict gl, double* __restrict dx,
                                 double* __restrict dk) {
  const std::size_t sw = g.opts.stride[2];
  for (std::size_t dt = w.lo[0]; dt < w.hi[0]; ++dt) {
    const std::size_t ti = static_cast<std::size_t>(w.base[0] + static_cast<std::ptrdiff_t>(dt));
    for (std::size_t dh = w.lo[1]; dh < w.hi[1]; ++dh) {
      const std::size_t hi = static_cast<std::size_t>(w.base[1] + static_cast<std::ptrdiff_t>(dh));
      const std::size_t row = (ti * g.H + hi) * g.W + static_cast<std::size_t>(w.base[2]);
      for (std::size_t dw = 0; dw < g.kw; ++dw) {
        const std::size_t tap = (dt * g.kh + dh) * g.kw + dw;
        if (dk != nullptr) {
          double* dkt = dk + tap * CI * CO;
          for (std::size_t ci = 0; ci < CI; ++ci) {
            double sum[CO] = {};
            for (std::size_t r = 0; r < R; ++r) {
              const double xv = x[(row + r * sw + dw) * CI + ci];
              for (std::size_t co = 0; co < CO; ++co) sum[co] += xv * gl[r * CO + co];
            }
            for (std::size_t co = 0; co < CO; ++co) dkt[ci * CO + co] += sum[co];
          }
        }
        if (dx != nullptr) {
          const double* k_tap = kt + tap * CO * CI;
          double sum[R][CI] = {};
          for (std::size_t co = 0; co < CO; ++co)
            for (std::size_t r = 0; r < R; ++r)
              for (std::size_t ci = 0; ci < CI; ++ci) sum[r][ci] += gl[r * CO + co] * k_tap[co * CI + ci];
          for (std::size_t r = 0; r < R; ++r) {
            double* dxc = dx + (row + r * sw + dw) * CI;
            for (std::size_t ci = 0; ci < CI; ++ci) dxc[ci] += sum[r][ci];
          }
        }
      }
    }
  }
}

template <std::size_t CI, std::size_t CO>
void conv3d_backward_impl(const ConvGeometry& g, const double* x, const double* k, const double* go, double* dx,
                          double* dk) {
  constexpr std::size_t R = 4;
  const std::size_t cin = CI ? CI : g.cin;
  const std::size_t cout = CO ? CO : g.cout;
  std::vector<double> dynamic(CO ? 0 : R * cout + cout);
  double fixed[CO ? R * CO + CO : 1];
  double* gl = CO ? fixed : dynamic.data();
  double* sum = gl + R * cout;
  const std::size_t sw = g.opts.stride[2];
  std::vector<double> k_swapped;
  if constexpr (CO > 0) {
    if (dx != nullptr) {
      const std::size_t taps = g.kt * g.kh * g.kw;
      k_swapped.resize(taps * CI * CO);
      for (std::size_t t = 0; t < taps; ++t)
        for (std::size_t ci = 0; ci < CI; ++ci)
          for (std::size_t co = 0; co < CO; ++co) k_swapped[(t * CO + co) * CI + ci] = k[(t * CI + ci) * CO + co];
    }
  }
  std::size_t run = 0;
  auto tap_grads = [&](std::size_t tap, std::size_t in_cell, const double* gcell) {
    if (dk != nullptr) {
      const double* xc = x + in_cell * cin;
      double* dkt = dk + tap * cin * cout;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double xv = xc[ci];
        if (xv == 0.0) continue;
        double* dkr = dkt + ci * cout;
        for (std::size_t co = 0; co < cout; ++co) dkr[co] += xv * gcell[co];
      }
    }
    if (dx != nullptr) {
      const double* kt = k + tap * cin * cout;
      double* dxc = dx + in_cell * cin;
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* kr = kt + ci * cout;
        double s = 0.0;
        for (std::size_t co = 0; co < cout; ++co) s += kr[co] * gcell[co];
        dxc[ci] += s;
      }
    }
  };
  for_each_output(g, [&](std::size_t out_cell, const TapWindow& w) {
    if (run > 0) {
      --run;
      return;
    }
    const std::size_t wo = out_cell % g.Wo;
    const std::ptrdiff_t last_base = w.base[2] + static_cast<std::ptrdiff_t>((R - 1) * sw);
    if (wo + R <= g.Wo && w.lo[2] == 0 && w.base[2] >= 0 &&
        last_base + static_cast<std::ptrdiff_t>(g.kw) <= static_cast<std::ptrdiff_t>(g.W)) {
      run = R - 1;
      bool live = false;
      for (std::size_t i = 0; i < R * cout; ++i) {
        gl[i] = go[out_cell * cout + i];
        live = live || gl[i] != 0.0;
      }
      // cells with an all-zero gradient (dead relu downstream) contribute nothing
      if (!live) return;
      if constexpr (CO > 0) {
        backward_block_fixed<CI, CO, R>(g, w, x, k_swapped.data(), gl, dx, dk);
        return;
      }
      for (std::size_t dt = w.lo[0]; dt < w.hi[0]; ++dt) {
        const std::size_t ti = static_cast<std::size_t>(w.base[0] + static_cast<std::ptrdiff_t>(dt));
        for (std::size_t dh = w.lo[1]; dh < w.hi[1]; ++dh) {
          const std::size_t hi = static_cast<std::size_t>(w.base[1] + static_cast<std::ptrdiff_t>(dh));
          const std::size_t row = (ti * g.H + hi) * g.W + static_cast<std::size_t>(w.base[2]);
          for (std::size_t dw = 0; dw < g.kw; ++dw) {
            const std::size_t tap = (dt * g.kh + dh) * g.kw + dw;
            if (dk != nullptr) {
              double* dkt = dk + tap * cin * cout;
              for (std::size_t ci = 0; ci < cin; ++ci) {
                for (std::size_t co = 0; co < cout; ++co) sum[co] = 0.0;
                for (std::size_t r = 0; r < R; ++r) {
                  const double xv = x[(row + r * sw + dw) * cin + ci];
                  for (std::size_t co = 0; co < cout; ++co) sum[co] += xv * gl[r * cout + co];
                }
                double* dkr = dkt + ci * cout;
                for (std::size_t co = 0; co < cout; ++co) dkr[co] += sum[co];
              }
            }
            if (dx != nullptr) {
              const double* kt = k + tap * cin * cout;
              for (std::size_t r = 0; r < R; ++r) {
                double* dxc = dx + (row + r * sw + dw) * cin;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const double* kr = kt + ci * cout;
                  double s = 0.0;
                  for (std::size_t co = 0; co < cout; ++co) s += kr[co] * gl[r * cout + co];
                  dxc[ci] += s;
                }
              }
            }
          }
        }
      }
      return;
    }
    const double* gc = go + out_cell * cout;
    if (std::all_of(gc, gc + cout, [](double v) { return v == 0.0; })) return;
    for_each_tap(g, w, [&](std::size_t tap, std::size_t in_cell) { tap_grads(tap, in_cell, gc); });
  });
}

// Instantiates the kernels for the channel pairs of the shipped backbones.
template <typename Fn>
void dispatch_channels(std::size_t cin, std::size_t cout, Fn&& fn) {
  using std::integral_constant;
  using Z = std::size_t;
  if (cin == 1 && cout == 4) return fn(integral_constant<Z, 1>{}, integral_constant<Z, 4>{});
  if (cin == 4 && cout == 4) return fn(integral_constant<Z, 4>{}, integral_constant<Z, 4>{});
  if (cin == 1 && cout == 8) return fn(integral_constant<Z, 1>{}, integral_constant<Z, 8>{});
  if (cin == 8 && cout == 12) return fn(integral_constant<Z, 8>{}, integral_constant<Z, 12>{});
  if (cin == 12 && cout == 12) return fn(integral_constant<Z, 12>{}, integral_constant<Z, 12>{});
  return fn(integral_constant<Z, 0>{}, integral_constant<Z, 0>{});
}

Tensor conv3d_forward(const ConvGeometry& g, const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  Tensor out = Tensor::zeros({g.To, g.Ho, g.Wo, g.cout});
  dispatch_channels(g.cin, g.cout, [&](auto ci, auto co) {
    conv3d_forward_impl<decltype(ci)::value, decltype(co)::value>(g, input.raw(), kernel.raw(), bias.raw(),
                                                                   out.raw());
  });
  return out;
}

std::size_t row_count(const Tensor& t) { return t.numel() / t.shape().back(); }

}  // namespace

namespace kernels {

Tensor conv3d(const Tensor& input, const Tensor& kernel, const Tensor& bias, const Conv3dOptions& opts) {
  return conv3d_forward(conv_geometry(input, kernel, bias, opts), input, kernel, bias);
}

Tensor pointwise_conv(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_rank(weight, 2, "pointwise_conv", "weight");
  require_rank(bias, 1, "pointwise_conv", "bias");
  if (input.empty()) throw DimensionError("pointwise_conv: empty input");
  const std::size_t cin = weight.extent(0);
  const std::size_t cout = weight.extent(1);
  if (input.shape().back() != cin) {
    throw DimensionError("pointwise_conv: input " + shape_str(input.shape()) + " has " +
                         std::to_string(input.shape().back()) + " channels, weight expects " +
                         std::to_string(cin));
  }
  if (bias.extent(0) != cout) {
    throw DimensionError("pointwise_conv: bias has " + std::to_string(bias.extent(0)) + " entries, weight has " +
                         std::to_string(cout) + " outputs");
  }
  Shape out_shape = input.shape();
  out_shape.back() = cout;
  Tensor out = Tensor::zeros(out_shape);
  const std::size_t cells = row_count(input);
  const double* x = input.raw();
  const double* w = weight.raw();
  double* o = out.raw();
  for (std::size_t cell = 0; cell < cells; ++cell) {
    double* __restrict oc = o + cell * cout;
    const double* xc = x + cell * cin;
    std::copy(bias.raw(), bias.raw() + cout, oc);
    for (std::size_t ci = 0; ci < cin; ++ci) {
      const double xv = xc[ci];
      if (xv == 0.0) continue;
      const double* __restrict wr = w + ci * cout;
      for (std::size_t co = 0; co < cout; ++co) oc[co] += xv * wr[co];
    }
  }
  return out;
}

Tensor softmax(const Tensor& scores) {
  if (scores.empty()) throw DimensionError("softmax: empty input");
  const std::size_t k = scores.shape().back();
  Tensor out = Tensor::zeros(scores.shape());
  for (std::size_t r = 0; r < row_count(scores); ++r) {
    const double* s = scores.raw() + r * k;
    double* y = out.raw() + r * k;
    const double m = *std::max_element(s, s + k);
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      y[i] = std::exp(s[i] - m);
      total += y[i];
    }
    for (std::size_t i = 0; i < k; ++i) y[i] /= total;
  }
  return out;
}

}  // namespace kernels

Var conv3d(Var input, Var kernel, Var bias, const Conv3dOptions& opts) {
  const ConvGeometry g = conv_geometry(input.value(), kernel.value(), bias.value(), opts);
  Tensor out = conv3d_forward(g, input.value(), kernel.value(), bias.value());
  Tape& tape = input.tape();
  return tape.record(std::move(out), {input, kernel, bias}, [=](Tape& tp, const Tensor& gout) {
    const bool need_x = tp.requires_grad(input);
    const bool need_k = tp.requires_grad(kernel);
    const std::size_t cout = g.cout;
    const double* go = gout.raw();
    const double* x = tp.value(input).raw();
    const double* k = tp.value(kernel).raw();
    double* dx = need_x ? tp.grad_buffer(input).raw() : nullptr;
    double* dk = need_k ? tp.grad_buffer(kernel).raw() : nullptr;
    if (tp.requires_grad(bias)) {
      double* db = tp.grad_buffer(bias).raw();
      for (std::size_t cell = 0; cell < g.To * g.Ho * g.Wo; ++cell) {
        for (std::size_t co = 0; co < cout; ++co) db[co] += go[cell * cout + co];
      }
    }
    if (!need_x && !need_k) return;
    dispatch_channels(g.cin, cout, [&](auto ci, auto co) {
      conv3d_backward_impl<decltype(ci)::value, decltype(co)::value>(g, x, k, go, dx, dk);
    });
  });
}

Var pointwise_conv(Var input, Var weight, Var bias) {
  Tensor out = kernels::pointwise_conv(input.value(), weight.value(), bias.value());
  Tape& tape = input.tape();
  return tape.record(std::move(out), {input, weight, bias}, [=](Tape& tp, const Tensor& gout) {
    const Tensor& x = tp.value(input);
    const Tensor& w = tp.value(weight);
    const std::size_t cin = w.extent(0);
    const std::size_t cout = w.extent(1);
    const std::size_t cells = row_count(x);
    const double* go = gout.raw();
    if (tp.requires_grad(bias)) {
      double* db = tp.grad_buffer(bias).raw();
      for (std::size_t cell = 0; cell < cells; ++cell) {
        for (std::size_t co = 0; co < cout; ++co) db[co] += go[cell * cout + co];
      }
    }
    if (tp.requires_grad(weight)) {
      double* dw = tp.grad_buffer(weight).raw();
      for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* xc = x.raw() + cell * cin;
        const double* __restrict gc = go + cell * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double xv = xc[ci];
          if (xv == 0.0) continue;
          double* __restrict dwr = dw + ci * cout;
          for (std::size_t co = 0; co < cout; ++co) dwr[co] += xv * gc[co];
        }
      }
    }
    if (tp.requires_grad(input)) {
      double* dx = tp.grad_buffer(input).raw();
      for (std::size_t cell = 0; cell < cells; ++cell) {
        const double* __restrict gc = go + cell * cout;
        for (std::size_t ci = 0; ci < cin; ++ci) {
          const double* __restrict wr = w.raw() + ci * cout;
          double s = 0.0;
          for (std::size_t co = 0; co < cout; ++co) s += wr[co] * gc[co];
          dx[cell * cin + ci] += s;
        }
      }
    }
  });
}

Var dense(Var input, Var weight, Var bias) {
  require_rank(input.value(), 1, "dense", "input");
  return pointwise_conv(input, weight, bias);
}

Var relu(Var x) {
  const Tensor& in = x.value();
  Tensor out = Tensor::zeros(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  x.tape().note_kinks(in.data());
  return x.tape().record(std::move(out), {x}, [x](Tape& tp, const Tensor& gout) {
    const Tensor& in = tp.value(x);
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < in.numel(); ++i) {
      if (in[i] > 0.0) dx[i] += gout[i];
    }
  });
}

Var dropout(Var x, double p, Mode mode, Rng* rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: probability must be in [0,1), got " + std::to_string(p));
  }
  if (mode == Mode::eval || p == 0.0) return x;
  if (rng == nullptr) throw ContractError("dropout: train mode needs an rng");
  const double keep_scale = 1.0 / (1.0 - p);
  const Tensor& in = x.value();
  auto mask = std::make_shared<std::vector<double>>(in.numel());
  Tensor out = Tensor::zeros(in.shape());
  for (std::size_t i = 0; i < in.numel(); ++i) {
    (*mask)[i] = rng->uniform() < p ? 0.0 : keep_scale;
    out[i] = in[i] * (*mask)[i];
  }
  return x.tape().record(std::move(out), {x}, [x, mask](Tape& tp, const Tensor& gout) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t i = 0; i < gout.numel(); ++i) dx[i] += gout[i] * (*mask)[i];
  });
}

Var global_avg_pool(Var x) {
  const Tensor& in = x.value();
  if (in.rank() < 2) throw DimensionError("global_avg_pool: input must have rank >= 2, got " + shape_str(in.shape()));
  const std::size_t c = in.shape().back();
  const std::size_t cells = row_count(in);
  Tensor out = Tensor::zeros({c});
  for (std::size_t cell = 0; cell < cells; ++cell) {
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += in[cell * c + ch];
  }
  const double inv = 1.0 / static_cast<double>(cells);
  for (std::size_t ch = 0; ch < c; ++ch) out[ch] *= inv;
  return x.tape().record(std::move(out), {x}, [x, c, cells, inv](Tape& tp, const Tensor& gout) {
    Tensor& dx = tp.grad_buffer(x);
    for (std::size_t cell = 0; cell < cells; ++cell) {
      for (std::size_t ch = 0; ch < c; ++ch) dx[cell * c + ch] += gout[ch] * inv;
    }
  });
}

Var softmax(Var scores) {
  Tensor out = kernels::softmax(scores.value());
  return scores.tape().record(std::move(out), {scores}, [scores](Tape& tp, const Tensor& gout) {
    const Tensor& s = tp.value(scores);
    const Tensor y = kernels::softmax(s);
    const std::size_t k = s.shape().back();
    Tensor& dx = tp.grad_buffer(scores);
    for (std::size_t r = 0; r < row_count(s); ++r) {
      const std::size_t base = r * k;
      double dot = 0.0;
      for (std::size_t i = 0; i < k; ++i) dot += gout[base + i] * y[base + i];
      for (std::size_t i = 0; i < k; ++i) dx[base + i] += y[base + i] * (gout[base + i] - dot);
    }
  });
}

Var weighted_sum(Var features, Var weights) {
  const Tensor& f = features.value();
  const Tensor& w = weights.value();
  require_rank(f, 2, "weighted_sum", "features");
  require_rank(w, 1, "weighted_sum", "weights");
  const std::size_t k = f.extent(0);
  const std::size_t c = f.extent(1);
  if (w.extent(0) != k) {
    throw DimensionError("weighted_sum: " + std::to_string(k) + " features but " + std::to_string(w.extent(0)) +
                         " weights");
  }
  Tensor out = Tensor::zeros({c});
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) out[ch] += w[i] * f[i * c + ch];
  }
  return features.tape().record(std::move(out), {features, weights}, [=](Tape& tp, const Tensor& gout) {
    const Tensor& f = tp.value(features);
    const Tensor& w = tp.value(weights);
    if (tp.requires_grad(weights)) {
      Tensor& dw = tp.grad_buffer(weights);
      for (std::size_t i = 0; i < k; ++i) {
        double s = 0.0;
        for (std::size_t ch = 0; ch < c; ++ch) s += gout[ch] * f[i * c + ch];
        dw[i] += s;
      }
    }
    if (tp.requires_grad(features)) {
      Tensor& df = tp.grad_buffer(features);
      for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) df[i * c + ch] += w[i] * gout[ch];
      }
    }
  });
}

Var weighted_sum(std::span<const Var> features, Var weights) {
  if (features.size() != weights.value().numel()) {
    throw DimensionError("weighted_sum: " + std::to_string(features.size()) + " features but " +
                         std::to_string(weights.value().numel()) + " weights");
  }
  for (Var f : features) require_rank(f.value(), 1, "weighted_sum", "feature");
  return weighted_sum(stack(features), weights);
}

Var cross_entropy(Var logits, int label) {
  const Tensor& z = logits.value();
  if (z.numel() != 2 || z.rank() != 1) {
    throw DimensionError("cross_entropy: expects two logits, got " + shape_str(z.shape()));
  }
  if (label != 0 && label != 1) {
    throw ContractError("cross_entropy: label must be 0 or 1, got " + std::to_string(label));
  }
  const double m = std::max(z[0], z[1]);
  const double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
  Tensor out = Tensor::zeros({1});
  out[0] = lse - z[static_cast<std::size_t>(label)];
  return logits.tape().record(std::move(out), {logits}, [logits, label](Tape& tp, const Tensor& gout) {
    const Tensor p = kernels::softmax(tp.value(logits));
    Tensor& dz = tp.grad_buffer(logits);
    for (std::size_t i = 0; i < 2; ++i) {
      dz[i] += gout[0] * (p[i] - (static_cast<int>(i) == label ? 1.0 : 0.0));
    }
  });
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& gout) {
    for (Var v : {a, b}) {
      if (!tp.requires_grad(v)) continue;
      Tensor& d = tp.grad_buffer(v);
      for (std::size_t i = 0; i < gout.numel(); ++i) d[i] += gout[i];
    }
  });
}

Var mul(Var a, Var b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) + " differ");
  }
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  return a.tape().record(std::move(out), {a, b}, [a, b](Tape& tp, const Tensor& gout) {
    const Tensor& av = tp.value(a);
    const Tensor& bv = tp.value(b);
    if (tp.requires_grad(a)) {
      Tensor& d = tp.grad_buffer(a);
      for (std::size_t i = 0; i < gout.numel(); ++i) d[i] += gout[i] * bv[i];
    }
    if (tp.requires_grad(b)) {
      Tensor& d = tp.grad_buffer(b);
      for (std::size_t i = 0; i < gout.numel(); ++i) d[i] += gout[i] * av[i];
    }
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  return x.tape().record(std::move(out), {x}, [x, factor](Tape& tp, const Tensor& gout) {
    Tensor& d = tp.grad_buffer(x);
    for (std::size_t i = 0; i < gout.numel(); ++i) d[i] += gout[i] * factor;
  });
}

Var sum(Var x) {
  Tensor out = Tensor::zeros({1});
  for (double v : x.value().data()) out[0] += v;
  return x.tape().record(std::move(out), {x}, [x](Tape& tp, const Tensor& gout) {
    Tensor& d = tp.grad_buffer(x);
    for (double& v : d.data()) v += gout[0];
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().record(std::move(out), {x}, [x](Tape& tp, const Tensor& gout) {
    Tensor& d = tp.grad_buffer(x);
    for (std::size_t i = 0; i < gout.numel(); ++i) d[i] += gout[i];
  });
}

Var permute(Var x, std::span<const std::size_t> axes) {
  const Tensor& in = x.value();
  const std::size_t rank = in.rank();
  if (axes.size() != rank) throw DimensionError("permute: axis count does not match rank");
  std::vector<char> seen(rank, 0);
  for (std::size_t a : axes) {
    if (a >= rank || seen[a]) throw DimensionError("permute: axes are not a permutation");
    seen[a] = 1;
  }
  std::vector<std::size_t> in_stride(rank, 1);
  for (std::size_t a = rank - 1; a-- > 0;) in_stride[a] = in_stride[a + 1] * in.extent(a + 1);
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = in.extent(axes[i]);
    src_stride[i] = in_stride[axes[i]];
  }
  // gather[o] = input offset feeding output element o
  auto gather = std::make_shared<std::vector<std::size_t>>(in.numel());
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t o = 0; o < in.numel(); ++o) {
    std::size_t src = 0;
    for (std::size_t i = 0; i < rank; ++i) src += idx[i] * src_stride[i];
    (*gather)[o] = src;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t o = 0; o < out.numel(); ++o) out[o] = in[(*gather)[o]];
  return x.tape().record(std::move(out), {x}, [x, gather](Tape& tp, const Tensor& gout) {
    Tensor& d = tp.grad_buffer(x);
    for (std::size_t o = 0; o < gout.numel(); ++o) d[(*gather)[o]] += gout[o];
  });
}

Var stack(std::span<const Var> xs) {
  if (xs.empty()) throw DimensionError("stack: no inputs");
  const Shape& s0 = xs[0].shape();
  for (Var v : xs) {
    if (v.shape() != s0) {
      throw DimensionError("stack: shapes " + shape_str(s0) + " and " + shape_str(v.shape()) + " differ");
    }
  }
  Shape out_shape{xs.size()};
  out_shape.insert(out_shape.end(), s0.begin(), s0.end());
  const std::size_t n = shape_numel(s0);
  Tensor out = Tensor::zeros(out_shape);
  for (std::size_t k = 0; k < xs.size(); ++k) {
    std::copy(xs[k].value().raw(), xs[k].value().raw() + n, out.raw() + k * n);
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return xs[0].tape().record(std::move(out), xs, [parents, n](Tape& tp, const Tensor& gout) {
    for (std::size_t k = 0; k < parents.size(); ++k) {
      if (!tp.requires_grad(parents[k])) continue;
      Tensor& d = tp.grad_buffer(parents[k]);
      for (std::size_t i = 0; i < n; ++i) d[i] += gout[k * n + i];
    }
  });
}

Var concat_replicated(Var visual, Var audio) {
  const Tensor& v = visual.value();
  const Tensor& a = audio.value();
  require_rank(v, 4, "fuse", "visual feature");
  require_rank(a, 2, "fuse", "audio feature");
  const std::size_t H = v.extent(0), W = v.extent(1), T = v.extent(2), cv = v.extent(3);
  const std::size_t ca = a.extent(1);
  if (a.extent(0) != T) {
    throw DimensionError("fuse: visual feature has T=" + std::to_string(T) + " but audio feature has T=" +
                         std::to_string(a.extent(0)));
  }
  const std::size_t c = cv + ca;
  Tensor out = Tensor::zeros({H, W, T, c});
  for (std::size_t cell = 0; cell < H * W * T; ++cell) {
    const std::size_t t = cell % T;
    std::copy(v.raw() + cell * cv, v.raw() + (cell + 1) * cv, out.raw() + cell * c);
    std::copy(a.raw() + t * ca, a.raw() + (t + 1) * ca, out.raw() + cell * c + cv);
  }
  return visual.tape().record(std::move(out), {visual, audio}, [=](Tape& tp, const Tensor& gout) {
    const bool need_v = tp.requires_grad(visual);
    const bool need_a = tp.requires_grad(audio);
    double* dv = need_v ? tp.grad_buffer(visual).raw() : nullptr;
    double* da = need_a ? tp.grad_buffer(audio).raw() : nullptr;
    for (std::size_t cell = 0; cell < H * W * T; ++cell) {
      const std::size_t t = cell % T;
      const double* g = gout.raw() + cell * c;
      if (need_v) {
        for (std::size_t ch = 0; ch < cv; ++ch) dv[cell * cv + ch] += g[ch];
      }
      if (need_a) {
        for (std::size_t ch = 0; ch < ca; ++ch) da[t * ca + ch] += g[cv + ch];
      }
    }
  });
}

}  // namespace avsync
