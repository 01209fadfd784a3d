//! Data expressions: parsing, evaluation and symbolic derivatives.
use blowup_lab::expr::Expr;
use blowup_lab::model::InitialData;

fn main() {
    let e = Expr::parse("5 + 2*exp(-(x/0.5)^2)").unwrap();
    let d = e.derivative();
    for x in [-0.5, 0.0, 0.25] {
        println!(
            "x = {x:+.2}: f = {:.6}, f' = {:+.6}",
            e.eval(x).unwrap(),
            d.eval(x).unwrap()
        );
    }
    let data = InitialData::from_wave(&Expr::parse("sin(x)").unwrap(), &Expr::parse("10").unwrap());
    println!(
        "f(0.3) = {:.6}, g(0.3) = {:.6}",
        data.f_at(0.3).unwrap(),
        data.g_at(0.3).unwrap()
    );
    println!("parse error: {}", Expr::parse("2 * foo(x)").unwrap_err());
}
