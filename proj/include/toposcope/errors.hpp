#pragma once

#include <stdexcept>
#include <string>

namespace toposcope {

// Base for everything the library throws on purpose. The CLI maps the
// subclasses onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual const char* kind() const noexcept { return "error"; }
};

class ContractViolation : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "contract_violation"; }
};

class BranchCut : public Error {
public:
    BranchCut(const std::string& msg, double re, double im)
        : Error(msg), eigen_re(re), eigen_im(im) {}
    const char* kind() const noexcept override { return "branch_cut"; }
    double eigen_re, eigen_im;
};

class NoGap : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "no_gap"; }
};

class Obstruction : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "obstruction"; }
};

class MeshTooCoarse : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "mesh_too_coarse"; }
};

class AnchorDegenerate : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "anchor_degenerate"; }
};

class NonConvergence : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "non_convergence"; }
};

class InputError : public Error {
public:
    using Error::Error;
    const char* kind() const noexcept override { return "input_error"; }
};

}  // namespace toposcope
