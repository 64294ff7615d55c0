# Ground-truth oracle and guarantee (violation-rate) studies
