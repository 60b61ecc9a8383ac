import { mountConsole } from "./app.js";
import { SocketLike } from "./session.js";

const params = new URLSearchParams(window.location.search);
const gatewayUrl = params.get("gw") ?? "ws://127.0.0.1:8765/";

// the native WebSocket satisfies SocketLike structurally; its handlers just
// take an event argument ours ignore
mountConsole(document.getElementById("app") as HTMLElement, gatewayUrl,
             (url) => new WebSocket(url) as unknown as SocketLike);
