use super::Expr;

pub(super) fn derivative(e: &Expr, var: usize) -> Expr {
    let d = |e: &Expr| derivative(e, var);
    match e {
        Expr::Const(_) => Expr::Const(0.0),
        Expr::Var(i) => Expr::Const(if *i == var { 1.0 } else { 0.0 }),
        Expr::Add(a, b) => Expr::add(d(a), d(b)),
        Expr::Sub(a, b) => Expr::sub(d(a), d(b)),
        Expr::Mul(a, b) => Expr::add(
            Expr::mul(d(a), (**b).clone()),
            Expr::mul((**a).clone(), d(b)),
        ),
        Expr::Div(a, b) => {
            let da = d(a);
            let db = d(b);
            if matches!(db, Expr::Const(c) if c == 0.0) {
                // denominator independent of var
                return Expr::div(da, (**b).clone());
            }
            Expr::div(
                Expr::sub(
                    Expr::mul(da, (**b).clone()),
                    Expr::mul((**a).clone(), db),
                ),
                Expr::pow((**b).clone(), 2.0),
            )
        }
        Expr::Pow(a, k) => Expr::mul(
            Expr::mul(Expr::Const(*k), Expr::pow((**a).clone(), k - 1.0)),
            d(a),
        ),
        Expr::Exp(a) => Expr::mul(e.clone(), d(a)),
        Expr::Ln(a) => Expr::div(d(a), (**a).clone()),
        Expr::Sqrt(a) => Expr::div(d(a), Expr::mul(Expr::Const(2.0), e.clone())),
        Expr::Tanh(a) => Expr::mul(
            Expr::sub(Expr::Const(1.0), Expr::pow(e.clone(), 2.0)),
            d(a),
        ),
        Expr::Sigmoid(a) => Expr::mul(
            Expr::mul(e.clone(), Expr::sub(Expr::Const(1.0), e.clone())),
            d(a),
        ),
        Expr::Neg(a) => Expr::neg(d(a)),
    }
}
