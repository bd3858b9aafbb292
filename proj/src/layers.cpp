#include "pixrec/layers.hpp"

#include <string>

#include "pixrec/errors.hpp"

namespace pixrec {

Tensor build_mask(const MaskSpec& s) {
  if (s.kernel_h % 2 == 0 || s.kernel_w % 2 == 0) {
    throw ConfigError("masked convolution needs odd kernel dims, got " +
                      std::to_string(s.kernel_h) + "x" + std::to_string(s.kernel_w));
  }
  if (s.groups == 0 || s.cin % s.groups != 0 || s.cout % s.groups != 0) {
    throw ConfigError("channels " + std::to_string(s.cin) + "->" + std::to_string(s.cout) +
                      " not divisible into " + std::to_string(s.groups) + " groups");
  }
  Tensor mask(Shape{s.kernel_h, s.kernel_w, s.cin, s.cout});
  const std::size_t cy = s.kernel_h / 2, cx = s.kernel_w / 2;
  for (std::size_t dy = 0; dy < s.kernel_h; ++dy) {
    for (std::size_t dx = 0; dx < s.kernel_w; ++dx) {
      const bool before = dy < cy || (dy == cy && dx < cx);
      const bool centre = dy == cy && dx == cx;
      if (!before && !centre) continue;
      double* tap = mask.ptr() + (dy * s.kernel_w + dx) * s.cin * s.cout;
      for (std::size_t ci = 0; ci < s.cin; ++ci) {
        const std::size_t gi = channel_group(ci, s.cin, s.groups);
        for (std::size_t co = 0; co < s.cout; ++co) {
          const std::size_t go = channel_group(co, s.cout, s.groups);
          const bool open = before || (s.kind == MaskKind::A ? gi < go : gi <= go);
          tap[ci * s.cout + co] = open ? 1.0 : 0.0;
        }
      }
    }
  }
  return mask;
}

Var gated_block(const Var& x, const GatedBlockVars& p, const GatedBlockMasks& masks,
                const Var* cond) {
  if (cond) {
    const Shape& cs = cond->shape();
    const Shape& xs = x.shape();
    if (cs.size() != 4 || cs[0] != xs[0] || cs[1] != xs[1] || cs[2] != xs[2]) {
      throw DimensionError("gated_block: conditioning " + shape_to_string(cs) +
                           " does not match input " + shape_to_string(xs));
    }
    if (!p.inj_tanh || !p.inj_sigmoid) {
      throw ConfigError("gated_block: conditioning given but block has no injection weights");
    }
  }
  ConvOptions conv_opts;
  conv_opts.mask = &masks.conv;
  Var t = add_bias(conv2d(x, p.w_tanh, conv_opts), p.b_tanh);
  Var s = add_bias(conv2d(x, p.w_sigmoid, conv_opts), p.b_sigmoid);
  if (cond) {
    t = add(t, conv2d(*cond, *p.inj_tanh));
    s = add(s, conv2d(*cond, *p.inj_sigmoid));
  }
  Var h = mul(tanh(t), sigmoid(s));
  ConvOptions proj_opts;
  proj_opts.mask = &masks.proj;
  return add(x, add_bias(conv2d(h, p.w_proj, proj_opts), p.b_proj));
}

Var resnet_block(const Var& x, const ResNetBlockVars& p) {
  Var h = add_bias(conv2d(relu(x), p.w1), p.b1);
  h = add_bias(conv2d(relu(h), p.w2), p.b2);
  return add(x, h);
}

}  // namespace pixrec
