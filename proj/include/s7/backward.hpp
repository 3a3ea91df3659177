#pragma once

// Reverse-mode gradients through the full stack. The hidden-state adjoint is
// carried from the last step to the first as a_{k-1} = lam_k * dLoss/dx_k.

#include <span>
#include <vector>

#include "s7/layer.hpp"

namespace s7 {

// Per block, dLoss/dlam for every step (len x m), with lam treated as a leaf.
template <typename T>
struct LeafGradients {
  std::vector<Vec<T>> dlam;
};

// dout: len x d gradient w.r.t. block outputs. Accumulates parameter grads into
// g and writes dLoss/d(block input) into dinput (len x d, overwritten).
template <typename T>
void block_backward(const BlockParams<T>& p, const BlockTrace<T>& tr, std::span<const T> dout, BlockParams<T>& g,
                    std::span<T> dinput, Vec<T>* dlam_leaf = nullptr) {
  const std::size_t len = tr.len, d = tr.d, m = tr.m;
  if (dout.size() != len * d || dinput.size() != len * d || p.d() != d || p.m() != m || g.d() != d || g.m() != m) {
    throw ShapeError("block_backward: trace " + std::to_string(len) + "x" + std::to_string(d) + " (m=" +
                     std::to_string(m) + ") vs parameter/gradient shapes");
  }
  if (dlam_leaf) dlam_leaf->assign(len * m, T(0));
  Vec<T> adj(m, T(0));  // dLoss/dx_k carried from step k+1
  Vec<T> dh(d), da(d), dy(d), dz(d), dcx(d), dsC(d), dx(m), ddrive(m), dbz(m), dsB(m), dwk(m);
  for (std::size_t kk = len; kk-- > 0;) {
    const auto nrm = tr.rd(tr.normalized, kk);
    const auto z = tr.rd(tr.z, kk);
    const auto y = tr.rd(tr.y, kk);
    const auto h = tr.rd(tr.h, kk);
    const auto gt = tr.rd(tr.gate, kk);
    const auto cx = tr.rd(tr.cx, kk);
    const auto sC = tr.rd(tr.sC, kk);
    const auto lam = tr.rm(tr.lam, kk);
    const auto dlam = tr.rm(tr.dlam, kk);
    const auto bz = tr.rm(tr.bz, kk);
    const auto sB = tr.rm(tr.sB, kk);
    const auto x = tr.state(static_cast<std::ptrdiff_t>(kk));
    const auto x_prev = tr.state(static_cast<std::ptrdiff_t>(kk) - 1);
    std::span<const T> go(dout.data() + kk * d, d);
    std::span<T> du(dinput.data() + kk * d, d);

    // residual
    std::copy(go.begin(), go.end(), du.begin());

    // out = h * sigmoid(gate_W h)
    for (std::size_t j = 0; j < d; ++j) {
      dh[j] = go[j] * gt[j];
      da[j] = go[j] * h[j] * gt[j] * (T(1) - gt[j]);
    }
    kernel::outer_add(g.gate_W, std::span<const T>(da), h);
    kernel::matvec_transpose_add(p.gate_W, std::span<const T>(da), std::span<T>(dh));
    for (std::size_t j = 0; j < d; ++j) dy[j] = dh[j] * kernel::gelu_derivative(y[j]);

    // y = (1 + sC) * cx + D * z
    for (std::size_t j = 0; j < d; ++j) {
      g.D[j] += dy[j] * z[j];
      dz[j] = dy[j] * p.D[j];
    }
    if (p.input_dep_C) {
      for (std::size_t j = 0; j < d; ++j) {
        dcx[j] = dy[j] * (T(1) + sC[j]);
        dsC[j] = dy[j] * cx[j];
      }
      kernel::outer_add(g.mod_C, std::span<const T>(dsC), z);
      kernel::matvec_transpose_add(p.mod_C, std::span<const T>(dsC), std::span<T>(dz));
    } else {
      std::copy(dy.begin(), dy.end(), dcx.begin());
    }
    kernel::outer_add(g.C, std::span<const T>(dcx), x);
    std::copy(adj.begin(), adj.end(), dx.begin());
    kernel::matvec_transpose_add(p.C, std::span<const T>(dcx), std::span<T>(dx));

    // x = lam * x_prev + drive + state_bias
    for (std::size_t i = 0; i < m; ++i) {
      const T dl = dx[i] * x_prev[i];
      if (dlam_leaf) (*dlam_leaf)[kk * m + i] = dl;
      dwk[i] = dl * dlam[i];
      adj[i] = dx[i] * lam[i];
      g.state_bias[i] += dx[i];
      ddrive[i] = dx[i];
    }
    if (p.input_dep_B) {
      for (std::size_t i = 0; i < m; ++i) {
        dbz[i] = ddrive[i] * (T(1) + sB[i]);
        dsB[i] = ddrive[i] * bz[i];
      }
      kernel::outer_add(g.mod_B, std::span<const T>(dsB), z);
      kernel::matvec_transpose_add(p.mod_B, std::span<const T>(dsB), std::span<T>(dz));
    } else {
      std::copy(ddrive.begin(), ddrive.end(), dbz.begin());
    }
    kernel::outer_add(g.B, std::span<const T>(dbz), z);
    kernel::matvec_transpose_add(p.B, std::span<const T>(dbz), std::span<T>(dz));

    // w_k = w + proj_lambda z + lambda_bias
    for (std::size_t i = 0; i < m; ++i) {
      g.w[i] += dwk[i];
      g.lambda_bias[i] += dwk[i];
    }
    kernel::outer_add(g.proj_lambda, std::span<const T>(dwk), z);
    kernel::matvec_transpose_add(p.proj_lambda, std::span<const T>(dwk), std::span<T>(dz));

    // z = norm_scale * nrm + norm_bias
    for (std::size_t j = 0; j < d; ++j) {
      g.norm_scale[j] += dz[j] * nrm[j];
      g.norm_bias[j] += dz[j];
      dz[j] *= p.norm_scale[j];
    }
    layer_norm_backward<T>(nrm, tr.rstd[kk], dz, du);
  }
}

// Accumulates dLoss/dparams into grads given dLoss/dpred for one sample.
template <typename T>
void backward_sequence(const Model<T>& model, const ModelTrace<T>& tr, const SequenceSample& sample,
                       std::span<const T> dpred, Model<T>& grads, LeafGradients<T>* leaf = nullptr) {
  const auto& sh = model.shape;
  const std::size_t len = tr.len, d = sh.d, out = sh.output_width;
  if (tr.blocks.size() != sh.depth || tr.acts.size() != sh.depth + 1 || dpred.size() != tr.pred.size()) {
    throw ShapeError("backward_sequence: trace does not match model depth or readout");
  }
  const Vec<T>& last = tr.acts[sh.depth];
  Vec<T> dact(len * d, T(0));
  if (sh.readout == Readout::per_step) {
    for (std::size_t k = 0; k < len; ++k) {
      std::span<const T> dp(dpred.data() + k * out, out);
      kernel::outer_add(grads.decoder, dp, std::span<const T>(last.data() + k * d, d));
      for (std::size_t i = 0; i < out; ++i) grads.decoder_bias[i] += dp[i];
      kernel::matvec_transpose_add(model.decoder, dp, std::span<T>(dact.data() + k * d, d));
    }
  } else {
    kernel::outer_add(grads.decoder, dpred, std::span<const T>(tr.pooled));
    for (std::size_t i = 0; i < out; ++i) grads.decoder_bias[i] += dpred[i];
    Vec<T> dpool(d, T(0));
    kernel::matvec_transpose_add(model.decoder, dpred, std::span<T>(dpool));
    const T inv = T(1) / static_cast<T>(len);
    for (std::size_t k = 0; k < len; ++k) {
      for (std::size_t j = 0; j < d; ++j) dact[k * d + j] = dpool[j] * inv;
    }
  }

  if (leaf) leaf->dlam.assign(sh.depth, Vec<T>());
  Vec<T> dinput(len * d);
  for (std::size_t l = sh.depth; l-- > 0;) {
    block_backward<T>(model.blocks[l], tr.blocks[l], dact, grads.blocks[l], dinput, leaf ? &leaf->dlam[l] : nullptr);
    std::swap(dact, dinput);
  }

  for (std::size_t k = 0; k < len; ++k) {
    std::span<const T> de(dact.data() + k * d, d);
    for (std::size_t j = 0; j < d; ++j) grads.encoder_bias[j] += de[j];
    if (sample.tokenized()) {
      const std::uint32_t tok = sample.tokens[k];
      for (std::size_t j = 0; j < d; ++j) grads.encoder(j, tok) += de[j];
    } else {
      for (std::size_t j = 0; j < d; ++j) {
        const T dj = de[j];
        for (std::size_t i = 0; i < sh.input_width; ++i) {
          grads.encoder(j, i) += dj * static_cast<T>(sample.inputs[k * sh.input_width + i]);
        }
      }
    }
  }
}

// Loss and full gradient of one sample (grads is overwritten).
template <typename T>
T loss_and_gradient(const Model<T>& model, const SequenceSample& sample, LossKind kind, Model<T>& grads,
                    ModelTrace<T>& trace, T loss_scale = T(1), LeafGradients<T>* leaf = nullptr) {
  stack_forward(model, sample, trace);
  Vec<T> dpred;
  const T loss = sample_loss(model, trace, sample, kind, &dpred) * loss_scale;
  for (T& v : dpred) v *= loss_scale;
  grads.for_each_param([](const std::string&, std::span<T> s, ParamGroup) { std::fill(s.begin(), s.end(), T(0)); });
  backward_sequence<T>(model, trace, sample, dpred, grads, leaf);
  return loss;
}

}  // namespace s7
