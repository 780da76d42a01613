#pragma once

#include <stdexcept>
#include <string>

namespace ilicast {

class Error : public std::runtime_error {
public:
	using std::runtime_error::runtime_error;
};

// Missing or malformed column mapping.
class SchemaError : public Error {
public:
	using Error::Error;
};

// Duplicate keys or other table-level invariant violations.
class IntegrityError : public Error {
public:
	using Error::Error;
};

// Argument outside the operation's domain (off-season week, unknown state).
class DomainError : public Error {
public:
	using Error::Error;
};

class InsufficientDataError : public Error {
public:
	using Error::Error;
};

class ConfigError : public Error {
public:
	using Error::Error;
};

// Solver failure: empty design, divergence, iteration budget exhausted.
class FitError : public Error {
public:
	using Error::Error;
};

// Caller broke an interface contract (layout mismatch, missing interval level).
class ContractError : public Error {
public:
	using Error::Error;
};

class ResumeError : public Error {
public:
	using Error::Error;
};

} // namespace ilicast
