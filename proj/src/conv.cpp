#include "pixrec/conv.hpp"

#include <algorithm>
#include <cstddef>
#include <string>

#include "pixrec/errors.hpp"

namespace pixrec {

ConvGeometry ConvGeometry::make(std::size_t in_h, std::size_t in_w, std::size_t kh,
                                std::size_t kw, std::size_t stride, Padding padding) {
  if (stride == 0) throw ParameterError("convolution stride must be >= 1");
  if (kh == 0 || kw == 0) throw DimensionError("convolution kernel has zero extent");
  ConvGeometry g;
  g.in_h = in_h;
  g.in_w = in_w;
  g.kh = kh;
  g.kw = kw;
  g.stride = stride;
  if (padding == Padding::same) {
    g.out_h = (in_h + stride - 1) / stride;
    g.out_w = (in_w + stride - 1) / stride;
    const std::size_t need_h = (g.out_h - 1) * stride + kh;
    const std::size_t need_w = (g.out_w - 1) * stride + kw;
    g.pad_top = need_h > in_h ? (need_h - in_h) / 2 : 0;
    g.pad_left = need_w > in_w ? (need_w - in_w) / 2 : 0;
  } else {
    if (kh > in_h || kw > in_w) {
      throw DimensionError("kernel " + std::to_string(kh) + "x" + std::to_string(kw) +
                           " larger than input " + std::to_string(in_h) + "x" +
                           std::to_string(in_w));
    }
    g.out_h = (in_h - kh) / stride + 1;
    g.out_w = (in_w - kw) / stride + 1;
  }
  return g;
}

PreparedKernel::PreparedKernel(const Tensor& k, const Tensor* m) : mask(m) {
  if (k.rank() != 4) {
    throw DimensionError("convolution kernel must be [kh,kw,Cin,Cout], got " +
                         shape_to_string(k.shape()));
  }
  kh = k.dim(0);
  kw = k.dim(1);
  cin = k.dim(2);
  cout = k.dim(3);
  weights.assign(k.data().begin(), k.data().end());
  std::vector<bool> row_live(kh * kw * cin, m == nullptr);
  if (m) {
    if (m->shape() != k.shape()) {
      throw DimensionError("mask shape " + shape_to_string(m->shape()) +
                           " differs from kernel shape " + shape_to_string(k.shape()));
    }
    for (std::size_t r = 0; r < row_live.size(); ++r) {
      const double* mrow = m->ptr() + r * cout;
      for (std::size_t co = 0; co < cout; ++co) {
        weights[r * cout + co] *= mrow[co];
        if (mrow[co] != 0.0) row_live[r] = true;
      }
    }
  }
  for (std::size_t r = 0; r < row_live.size(); ++r) {
    if (row_live[r]) {
      live.push_back(Row{static_cast<std::uint32_t>(r / cin), static_cast<std::uint32_t>(r % cin)});
    }
  }
  finish();
}

void PreparedKernel::finish() {
  dy_min = kh;
  dx_min = kw;
  dy_max = dx_max = 0;
  for (const Row& r : live) {
    const std::size_t dy = r.tap / kw, dx = r.tap % kw;
    dy_min = std::min(dy_min, dy);
    dy_max = std::max(dy_max, dy);
    dx_min = std::min(dx_min, dx);
    dx_max = std::max(dx_max, dx);
  }
  if (live.empty()) dy_min = dx_min = 0;
}

PreparedKernel PreparedKernel::flipped() const {
  PreparedKernel f;
  f.kh = kh;
  f.kw = kw;
  f.cin = cout;
  f.cout = cin;
  f.weights.assign(weights.size(), 0.0);
  const std::size_t taps = kh * kw;
  std::vector<bool> row_live(taps * cout, false);
  for (const Row& r : live) {
    const std::size_t ftap = taps - 1 - r.tap;
    for (std::size_t co = 0; co < cout; ++co) {
      if (mask && mask->data()[(r.tap * cin + r.ci) * cout + co] == 0.0) continue;
      f.weights[(ftap * cout + co) * cin + r.ci] = weights[(r.tap * cin + r.ci) * cout + co];
      row_live[ftap * cout + co] = true;
    }
  }
  for (std::size_t r = 0; r < row_live.size(); ++r) {
    if (row_live[r]) {
      f.live.push_back(Row{static_cast<std::uint32_t>(r / cout), static_cast<std::uint32_t>(r % cout)});
    }
  }
  f.finish();
  return f;
}

namespace {

// Input coordinate of tap `d` for output coordinate `o`; false when in padding.
inline bool input_coord(std::size_t o, std::size_t d, std::size_t stride, std::size_t pad,
                        std::size_t extent, std::size_t& out) {
  const std::size_t raw = o * stride + d;
  if (raw < pad) return false;
  out = raw - pad;
  return out < extent;
}

void check_input(const Tensor& in, const PreparedKernel& k, const ConvGeometry& g) {
  if (in.rank() != 4 || in.dim(1) != g.in_h || in.dim(2) != g.in_w || in.dim(3) != k.cin) {
    throw DimensionError("conv2d input " + shape_to_string(in.shape()) +
                         " incompatible with kernel " +
                         shape_to_string({k.kh, k.kw, k.cin, k.cout}));
  }
}

// Pointer offset of each live row relative to the input pixel under tap (0, 0).
std::vector<std::ptrdiff_t> row_offsets(const PreparedKernel& k, const ConvGeometry& g) {
  std::vector<std::ptrdiff_t> off;
  off.reserve(k.live.size());
  for (const auto& r : k.live) {
    const auto dy = static_cast<std::ptrdiff_t>(r.tap / k.kw);
    const auto dx = static_cast<std::ptrdiff_t>(r.tap % k.kw);
    off.push_back((dy * static_cast<std::ptrdiff_t>(g.in_w) + dx) *
                      static_cast<std::ptrdiff_t>(k.cin) +
                  r.ci);
  }
  return off;
}

constexpr std::size_t kBlock = 4;

// Four doubles per register; GCC/Clang vector extension.
typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  __builtin_memcpy(&v, p, sizeof v);
  return v;
}
inline void store4(double* p, v4d v) { __builtin_memcpy(p, &v, sizeof v); }

// kBlock horizontally adjacent outputs; same row order as conv_at.
template <std::size_t CO>
void conv_block(const double* origin, std::size_t step, const PreparedKernel& k,
                const std::vector<std::ptrdiff_t>& off, double* out) {
  if constexpr (CO % 4 == 0) {
    constexpr std::size_t V = CO / 4;
    v4d acc[kBlock][V];
    for (auto& row : acc) {
      for (auto& a : row) a = v4d{0.0, 0.0, 0.0, 0.0};
    }
    const double* w = k.weights.data();
    const auto* live = k.live.data();
    const std::size_t n = k.live.size();
    for (std::size_t r = 0; r < n; ++r) {
      const double* px = origin + off[r];
      const double* wr = w + (std::size_t{live[r].tap} * k.cin + live[r].ci) * CO;
      v4d wv[V];
      for (std::size_t j = 0; j < V; ++j) wv[j] = load4(wr + 4 * j);
      for (std::size_t p = 0; p < kBlock; ++p) {
        const double s = px[p * step];
        const v4d v = {s, s, s, s};
        for (std::size_t j = 0; j < V; ++j) acc[p][j] += v * wv[j];
      }
    }
    for (std::size_t p = 0; p < kBlock; ++p) {
      for (std::size_t j = 0; j < V; ++j) store4(out + p * CO + 4 * j, acc[p][j]);
    }
  } else {
    double acc[kBlock][CO] = {};
    const double* w = k.weights.data();
    for (std::size_t r = 0; r < k.live.size(); ++r) {
      const double* px = origin + off[r];
      const double* wr = w + (std::size_t{k.live[r].tap} * k.cin + k.live[r].ci) * CO;
      for (std::size_t p = 0; p < kBlock; ++p) {
        const double v = px[p * step];
        for (std::size_t co = 0; co < CO; ++co) acc[p][co] += v * wr[co];
      }
    }
    for (std::size_t p = 0; p < kBlock; ++p) {
      for (std::size_t co = 0; co < CO; ++co) out[p * CO + co] = acc[p][co];
    }
  }
}

using BlockFn = void (*)(const double*, std::size_t, const PreparedKernel&,
                         const std::vector<std::ptrdiff_t>&, double*);

BlockFn block_for(std::size_t cout) {
  switch (cout) {
    case 1: return conv_block<1>;
    case 2: return conv_block<2>;
    case 3: return conv_block<3>;
    case 4: return conv_block<4>;
    case 6: return conv_block<6>;
    case 8: return conv_block<8>;
    case 12: return conv_block<12>;
    case 16: return conv_block<16>;
    case 24: return conv_block<24>;
    case 32: return conv_block<32>;
    case 48: return conv_block<48>;
    case 64: return conv_block<64>;
    default: return nullptr;
  }
}

// Copy of one image inside a zero border wide enough that every tap of every
// output position (rounded up to whole blocks) lands in the buffer.
struct PaddedImage {
  std::size_t h = 0, w = 0, c = 0, top = 0, left = 0;
  std::vector<double> data;

  PaddedImage(const ConvGeometry& g, std::size_t cin) : c(cin), top(g.pad_top), left(g.pad_left) {
    const std::size_t wide = (g.out_w + kBlock - 1) / kBlock * kBlock;
    h = std::max(g.in_h + top, (g.out_h - 1) * g.stride + g.kh);
    w = std::max(g.in_w + left, (wide - 1) * g.stride + g.kw);
    data.assign(h * w * c, 0.0);
  }
  void load(const double* image, std::size_t in_h, std::size_t in_w) {
    for (std::size_t y = 0; y < in_h; ++y) {
      std::copy(image + y * in_w * c, image + (y + 1) * in_w * c,
                data.data() + ((y + top) * w + left) * c);
    }
  }
  const double* at(std::size_t y, std::size_t x) const { return data.data() + (y * w + x) * c; }
};

// Same as row_offsets but for the padded layout.
std::vector<std::ptrdiff_t> padded_offsets(const PreparedKernel& k, const PaddedImage& p) {
  ConvGeometry pg;
  pg.in_w = p.w;
  return row_offsets(k, pg);
}

// Padding adds +0 * w terms to accumulators that start at +0, which leaves
// the sums bit-identical to skipping those taps as conv_at does.
void forward_raw(const double* in, std::size_t batch, const PreparedKernel& k,
                 const ConvGeometry& g, double* out) {
  const std::size_t in_stride = g.in_h * g.in_w * k.cin;
  const std::size_t out_stride = g.out_h * g.out_w * k.cout;
  const BlockFn block = block_for(k.cout);
  if (!block) {
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          conv_at(in + b * in_stride, g, k, oy, ox, out + b * out_stride + (oy * g.out_w + ox) * k.cout);
        }
      }
    }
    return;
  }
  PaddedImage pad(g, k.cin);
  const auto off = padded_offsets(k, pad);
  const std::size_t step = g.stride * k.cin;
  std::vector<double> tail(kBlock * k.cout);
  for (std::size_t b = 0; b < batch; ++b) {
    pad.load(in + b * in_stride, g.in_h, g.in_w);
    double* o = out + b * out_stride;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ox += kBlock) {
        const double* origin = pad.at(oy * g.stride, ox * g.stride);
        double* dst = o + (oy * g.out_w + ox) * k.cout;
        if (ox + kBlock <= g.out_w) {
          block(origin, step, k, off, dst);
        } else {
          block(origin, step, k, off, tail.data());
          std::copy(tail.begin(), tail.begin() + (g.out_w - ox) * k.cout, dst);
        }
      }
    }
  }
}

// Kernel-gradient contribution of `n` (1 or kBlock) adjacent outputs.
template <std::size_t CO>
void kernel_grad_rows(const double* origin, std::size_t step, std::size_t n, const double* go,
                      const PreparedKernel& k, const std::vector<std::ptrdiff_t>& off,
                      double* acc) {
  if constexpr (CO % 4 == 0) {
    constexpr std::size_t V = CO / 4;
    if (n == kBlock) {
      v4d g[kBlock][V];
      for (std::size_t p = 0; p < kBlock; ++p) {
        for (std::size_t j = 0; j < V; ++j) g[p][j] = load4(go + p * CO + 4 * j);
      }
      for (std::size_t r = 0; r < k.live.size(); ++r) {
        const double* px = origin + off[r];
        double* a = acc + (std::size_t{k.live[r].tap} * k.cin + k.live[r].ci) * CO;
        v4d av[V];
        for (std::size_t j = 0; j < V; ++j) av[j] = load4(a + 4 * j);
        for (std::size_t p = 0; p < kBlock; ++p) {
          const double s = px[p * step];
          const v4d v = {s, s, s, s};
          for (std::size_t j = 0; j < V; ++j) av[j] += v * g[p][j];
        }
        for (std::size_t j = 0; j < V; ++j) store4(a + 4 * j, av[j]);
      }
      return;
    }
  }
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t r = 0; r < k.live.size(); ++r) {
      const double v = origin[off[r] + static_cast<std::ptrdiff_t>(p * step)];
      if (v == 0.0) continue;
      double* a = acc + (std::size_t{k.live[r].tap} * k.cin + k.live[r].ci) * CO;
      for (std::size_t co = 0; co < CO; ++co) a[co] += v * go[p * CO + co];
    }
  }
}

using KernelGradFn = void (*)(const double*, std::size_t, std::size_t, const double*,
                              const PreparedKernel&, const std::vector<std::ptrdiff_t>&, double*);

KernelGradFn kernel_grad_for(std::size_t cout) {
  switch (cout) {
    case 1: return kernel_grad_rows<1>;
    case 2: return kernel_grad_rows<2>;
    case 3: return kernel_grad_rows<3>;
    case 4: return kernel_grad_rows<4>;
    case 6: return kernel_grad_rows<6>;
    case 8: return kernel_grad_rows<8>;
    case 12: return kernel_grad_rows<12>;
    case 16: return kernel_grad_rows<16>;
    case 24: return kernel_grad_rows<24>;
    case 32: return kernel_grad_rows<32>;
    case 48: return kernel_grad_rows<48>;
    case 64: return kernel_grad_rows<64>;
    default: return nullptr;
  }
}

}  // namespace

void conv_at(const double* image, const ConvGeometry& g, const PreparedKernel& k,
             std::size_t oy, std::size_t ox, double* out) {
  std::fill(out, out + k.cout, 0.0);
  std::size_t last_tap = static_cast<std::size_t>(-1);
  const double* px = nullptr;
  bool inside = false;
  for (const auto& r : k.live) {
    if (r.tap != last_tap) {
      last_tap = r.tap;
      std::size_t iy = 0, ix = 0;
      inside = input_coord(oy, r.tap / k.kw, g.stride, g.pad_top, g.in_h, iy) &&
               input_coord(ox, r.tap % k.kw, g.stride, g.pad_left, g.in_w, ix);
      px = image + (iy * g.in_w + ix) * k.cin;
    }
    if (!inside) continue;
    const double v = px[r.ci];
    const double* w = k.weights.data() + (std::size_t{r.tap} * k.cin + r.ci) * k.cout;
    for (std::size_t co = 0; co < k.cout; ++co) out[co] += v * w[co];
  }
}

void conv_forward(const Tensor& in, const PreparedKernel& k, const ConvGeometry& g,
                  Tensor& out) {
  check_input(in, k, g);
  const std::size_t n = in.dim(0);
  out = Tensor(Shape{n, g.out_h, g.out_w, k.cout});
  forward_raw(in.ptr(), n, k, g, out.ptr());
}

void conv_backward_input(std::span<const double> grad_out, std::size_t batch,
                         const PreparedKernel& k, const ConvGeometry& g,
                         std::span<double> grad_in) {
  const std::size_t in_stride = g.in_h * g.in_w * k.cin;
  const std::size_t out_stride = g.out_h * g.out_w * k.cout;
  if (grad_out.size() != batch * out_stride || grad_in.size() != batch * in_stride) {
    throw DimensionError("conv backward buffer sizes do not match geometry");
  }
  if (g.stride == 1 && g.pad_top < g.kh && g.pad_left < g.kw) {
    // Stride-1 adjoint is a convolution of grad_out with the flipped kernel.
    const PreparedKernel fk = k.flipped();
    ConvGeometry fg;
    fg.in_h = g.out_h;
    fg.in_w = g.out_w;
    fg.out_h = g.in_h;
    fg.out_w = g.in_w;
    fg.kh = g.kh;
    fg.kw = g.kw;
    fg.stride = 1;
    fg.pad_top = g.kh - 1 - g.pad_top;
    fg.pad_left = g.kw - 1 - g.pad_left;
    std::vector<double> tmp(grad_in.size());
    forward_raw(grad_out.data(), batch, fk, fg, tmp.data());
    for (std::size_t i = 0; i < tmp.size(); ++i) grad_in[i] += tmp[i];
    return;
  }
  for (std::size_t b = 0; b < batch; ++b) {
    double* gi = grad_in.data() + b * in_stride;
    const double* go_img = grad_out.data() + b * out_stride;
    for (std::size_t oy = 0; oy < g.out_h; ++oy) {
      for (std::size_t ox = 0; ox < g.out_w; ++ox) {
        const double* go = go_img + (oy * g.out_w + ox) * k.cout;
        for (const auto& r : k.live) {
          std::size_t iy = 0, ix = 0;
          if (!input_coord(oy, r.tap / k.kw, g.stride, g.pad_top, g.in_h, iy)) continue;
          if (!input_coord(ox, r.tap % k.kw, g.stride, g.pad_left, g.in_w, ix)) continue;
          const double* w = k.weights.data() + (std::size_t{r.tap} * k.cin + r.ci) * k.cout;
          double s = 0.0;
          for (std::size_t co = 0; co < k.cout; ++co) s += w[co] * go[co];
          gi[(iy * g.in_w + ix) * k.cin + r.ci] += s;
        }
      }
    }
  }
}

void conv_backward_kernel(std::span<const double> in, std::span<const double> grad_out,
                          std::size_t batch, const PreparedKernel& k, const ConvGeometry& g,
                          std::span<double> grad_kernel) {
  const std::size_t in_stride = g.in_h * g.in_w * k.cin;
  const std::size_t out_stride = g.out_h * g.out_w * k.cout;
  if (grad_out.size() != batch * out_stride || in.size() != batch * in_stride ||
      grad_kernel.size() != k.weights.size()) {
    throw DimensionError("conv kernel-gradient buffer sizes do not match geometry");
  }
  std::vector<double> acc(k.weights.size(), 0.0);
  const KernelGradFn fast = kernel_grad_for(k.cout);
  if (fast) {
    PaddedImage pad(g, k.cin);
    const auto off = padded_offsets(k, pad);
    const std::size_t step = g.stride * k.cin;
    for (std::size_t b = 0; b < batch; ++b) {
      pad.load(in.data() + b * in_stride, g.in_h, g.in_w);
      const double* go_img = grad_out.data() + b * out_stride;
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w;) {
          const std::size_t n = ox + kBlock <= g.out_w ? kBlock : 1;
          fast(pad.at(oy * g.stride, ox * g.stride), step, n,
               go_img + (oy * g.out_w + ox) * k.cout, k, off, acc.data());
          ox += n;
        }
      }
    }
  } else {
    for (std::size_t b = 0; b < batch; ++b) {
      const double* image = in.data() + b * in_stride;
      const double* go_img = grad_out.data() + b * out_stride;
      for (std::size_t oy = 0; oy < g.out_h; ++oy) {
        for (std::size_t ox = 0; ox < g.out_w; ++ox) {
          const double* go = go_img + (oy * g.out_w + ox) * k.cout;
          for (const auto& r : k.live) {
            std::size_t iy = 0, ix = 0;
            if (!input_coord(oy, r.tap / k.kw, g.stride, g.pad_top, g.in_h, iy)) continue;
            if (!input_coord(ox, r.tap % k.kw, g.stride, g.pad_left, g.in_w, ix)) continue;
            const double v = image[(iy * g.in_w + ix) * k.cin + r.ci];
            if (v == 0.0) continue;
            double* a = acc.data() + (std::size_t{r.tap} * k.cin + r.ci) * k.cout;
            for (std::size_t co = 0; co < k.cout; ++co) a[co] += v * go[co];
          }
        }
      }
    }
  }
  if (k.mask) {
    const auto m = k.mask->data();
    for (std::size_t i = 0; i < acc.size(); ++i) grad_kernel[i] += acc[i] * m[i];
  } else {
    for (std::size_t i = 0; i < acc.size(); ++i) grad_kernel[i] += acc[i];
  }
}

}  // namespace pixrec
