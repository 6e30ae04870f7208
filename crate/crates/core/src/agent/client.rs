use serde_json::{json, Value};

use super::AgentError;
use crate::server::Server;

/// A JSON-RPC connection to a control-plane server. The loop talks to the
/// server through this and nothing else.
pub trait ToolClient {
    /// Send one request and return its `result` member.
    fn request(&mut self, method: &str, params: Value) -> Result<Value, AgentError>;

    /// Call a tool and unwrap the result envelope, returning `data`.
    fn call_tool(&mut self, name: &str, arguments: Value) -> Result<Value, AgentError> {
        let env = self.request("tools/call", json!({ "name": name, "arguments": arguments }))?;
        if env.get("ok") == Some(&Value::Bool(true)) {
            return env
                .get("data")
                .cloned()
                .ok_or_else(|| AgentError::Protocol(format!("`{name}` reply has no data")));
        }
        let err = env.get("error").cloned().unwrap_or(Value::Null);
        let text = |k: &str| err.get(k).and_then(Value::as_str).unwrap_or_default().to_string();
        Err(AgentError::Tool {
            tool: name.to_string(),
            kind: text("kind"),
            message: text("message"),
        })
    }
}

/// In-process client: serializes each request and hands the text to
/// [`Server::handle_message`], exactly as a transport would.
pub struct LocalClient<'a> {
    server: &'a Server,
    next_id: u64,
}

impl<'a> LocalClient<'a> {
    pub fn new(server: &'a Server) -> Self {
        LocalClient { server, next_id: 1 }
    }
}

impl ToolClient for LocalClient<'_> {
    fn request(&mut self, method: &str, params: Value) -> Result<Value, AgentError> {
        let id = self.next_id;
        self.next_id += 1;
        let msg = json!({ "jsonrpc": "2.0", "id": id, "method": method, "params": params });
        let reply = self
            .server
            .handle_message(&msg.to_string())
            .ok_or_else(|| AgentError::Protocol(format!("no reply to `{method}`")))?;
        let mut v: Value = serde_json::from_str(&reply).map_err(|e| AgentError::Protocol(e.to_string()))?;
        if v.get("id") != Some(&json!(id)) {
            return Err(AgentError::Protocol(format!("reply id mismatch for `{method}`")));
        }
        if let Some(e) = v.get("error") {
            return Err(AgentError::Rpc {
                code: e.get("code").and_then(Value::as_i64).unwrap_or(0),
                message: e.get("message").and_then(Value::as_str).unwrap_or_default().to_string(),
            });
        }
        v.get_mut("result")
            .map(Value::take)
            .ok_or_else(|| AgentError::Protocol(format!("reply to `{method}` has no result")))
    }
}
