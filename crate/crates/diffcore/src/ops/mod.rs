//! Differentiable primitives. Every op records a backward rule on the tape.

mod conv;
mod elementwise;
mod linalg;
mod nn;
mod shape;

/// Names of the primitives provided by this crate, each with a registered
/// backward rule.
pub fn op_set() -> &'static [&'static str] {
    &[
        "add",
        "sub",
        "mul",
        "div",
        "scale",
        "add_scalar",
        "neg",
        "matmul",
        "linear",
        "bmm",
        "conv2d",
        "upsample_nearest",
        "upsample_bilinear",
        "max_pool2d",
        "avg_pool2d",
        "relu",
        "sigmoid",
        "softplus",
        "exp",
        "log",
        "sin",
        "cos",
        "square",
        "sqrt",
        "abs",
        "softmax",
        "l2_normalize",
        "concat",
        "slice",
        "reshape",
        "broadcast",
        "sum",
        "mean",
        "sum_axis",
        "mean_axis",
    ]
}
