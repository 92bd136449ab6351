"""Tape opcodes shared by the expression compiler and both kernel backends.

A tape is the flattened postorder form of an expression AST: one row of
``code`` per node, ``(opcode, a, b)``, writing its result to the register
with the same index as the row.  Operand meaning by opcode:

==========  =============================================
CONST       a = index into the constants array
VARQ/VARV   a = coordinate index
unary ops   a = child register
binary ops  a, b = child registers
POWI        a = base register, b = the integer exponent itself
POWF        a = base register, b = constants index of the exponent
POWV        a = base register, b = exponent register
==========  =============================================

The compiled backend hard-codes the same numbering; the parity tests in
the suite pin the two implementations against each other.
"""

CONST = 0
VARQ = 1
VARV = 2
ADD = 3
SUB = 4
MUL = 5
DIV = 6
NEG = 7
SIN = 8
COS = 9
TAN = 10
SQRT = 11
EXP = 12
LOG = 13
POWI = 14
POWF = 15
POWV = 16

NAMES = {
    CONST: "const", VARQ: "q", VARV: "v", ADD: "+", SUB: "-", MUL: "*",
    DIV: "/", NEG: "neg", SIN: "sin", COS: "cos", TAN: "tan", SQRT: "sqrt",
    EXP: "exp", LOG: "log", POWI: "^", POWF: "^", POWV: "^",
}

# status codes returned by the solve/integrate kernels
OK = 0
ERR_NEWTON = 1
ERR_SINGULAR = 2
ERR_DOMAIN = 3
