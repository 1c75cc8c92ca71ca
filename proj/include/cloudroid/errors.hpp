#ifndef CLOUDROID_ERRORS_HPP
#define CLOUDROID_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace cloudroid {

  struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  // Malformed JSON text.
  struct SyntaxError : Error {
    using Error::Error;
  };

  // A manifest or config document violated an invariant. `path` locates the
  // offending field, e.g. "interface.topics[1].name".
  struct ValidationError : Error {
    std::string path;

    ValidationError(std::string path, const std::string& what)
        : Error(path + ": " + what), path(std::move(path))
    {}
  };

  struct ProtocolError : Error {
    // "malformed" or "invariant"
    std::string code;

    ProtocolError(std::string code, const std::string& what)
        : Error(what), code(std::move(code))
    {}
  };

  struct CodecError : Error {
    using Error::Error;
  };

  struct SchemaError : Error {
    using Error::Error;
  };

  struct UnknownTarget : Error {
    using Error::Error;
  };

  struct UnknownService : Error {
    using Error::Error;
  };

  struct UnknownServant : Error {
    using Error::Error;
  };

  struct InsufficientResources : Error {
    using Error::Error;
  };

  struct ConflictError : Error {
    using Error::Error;
  };

  struct WorkloadLaunchError : Error {
    using Error::Error;
  };

  struct ServiceDown : Error {
    using Error::Error;
  };

  // An error envelope returned by the portal for a call.
  struct RemoteError : Error {
    std::string code;

    RemoteError(std::string code, const std::string& what)
        : Error(what), code(std::move(code))
    {}
  };

  struct LocalLaunchError : Error {
    using Error::Error;
  };

  struct ScenarioError : Error {
    using Error::Error;
  };

  struct EmptyInput : Error {
    using Error::Error;
  };

  struct IoError : Error {
    using Error::Error;
  };

} // namespace cloudroid

#endif
