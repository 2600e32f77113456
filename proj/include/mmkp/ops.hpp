#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mmkp/autograd.hpp"

// Differentiable primitives. Every function records onto the tape of its
// first operand; all operands must share that tape.
namespace mmkp::ops {

inline constexpr double kLayerNormEps = 1e-5;

enum class PoolMode { kMax, kAvg };

// [m x k] * [k x n]. A rank-1 left operand is a row vector (result rank 1);
// a rank-1 right operand is a column vector (result rank 1).
Var matmul(Var a, Var b);

// Same shapes, a row vector [n] added to every row of [m x n], or a
// one-element operand broadcast over the other.
Var add(Var a, Var b);
Var sub(Var a, Var b);
// Same shapes or one-element broadcast.
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
// 1 - x
Var one_minus(Var a);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var log(Var a);
Var reciprocal(Var a);

// Numerically stable softmax along `axis` (negative counts from the back).
Var softmax(Var x, int axis = -1);

// Concatenate along the last axis. Non-last extents must agree.
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
// Stack rank-1 vectors [n] into a matrix [m x n].
Var stack_rows(std::span<const Var> rows);

Var layer_norm(Var x, Var gain, Var bias, double eps = kLayerNormEps);

// Column-wise reduction of [L x d] to [d]. Max routes gradient to the
// lowest row index on ties.
Var pool(Var x, PoolMode mode);

Var transpose(Var a);
Var reshape(Var a, Shape shape);
Var row(Var a, std::size_t r);
Var slice_cols(Var a, std::size_t begin, std::size_t count);

Var sum(Var a);
// Element i of a flattened tensor as a scalar.
Var pick(Var a, std::size_t i);
// out[index[i]] += x[i], out sized `size`.
Var scatter_add(Var x, std::span<const std::size_t> index, std::size_t size);
// Rows of `table` selected by ids -> [ids.size() x cols].
Var gather_rows(Var table, std::span<const std::size_t> ids);

}  // namespace mmkp::ops
