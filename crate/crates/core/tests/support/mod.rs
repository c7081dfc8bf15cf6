pub mod exact_binomial;
