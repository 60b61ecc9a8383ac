// DOM wiring: render the session state into the page and feed form input
// back into it. All protocol logic lives in the imported modules.

import { Action } from "./commands.js";
import { ConsoleSession, SocketFactory } from "./session.js";

const SUBSYSTEMS: [number, string][] = [
    [0x01, "WDE 1"], [0x02, "WDE 2"], [0x03, "WDE 3"],
    [0x04, "STS 1"], [0x05, "STS 2"],
    [0x06, "Battery"], [0x07, "GPS"], [0x08, "Custom PC104"],
    [0x00, "OBDH internal"],
];

export function mountConsole(root: HTMLElement, gatewayUrl: string,
                             factory: SocketFactory): ConsoleSession {
    root.innerHTML = `
      <header>
        <h1>EGSE console</h1>
        <span id="conn" class="badge">closed</span>
        <span id="gw-url"></span>
      </header>
      <main>
        <section class="log-pane">
          <table id="log">
            <thead><tr><th>time</th><th>dir</th><th>id</th><th>summary</th><th>hex</th></tr></thead>
            <tbody></tbody>
          </table>
        </section>
        <aside>
          <div class="readout">
            <div class="readout-label">wheel speed</div>
            <div id="wheel" class="readout-value">&mdash;</div>
          </div>
          <form id="command-form">
            <label>subsystem
              <select id="target"></select>
            </label>
            <label>action
              <select id="action">
                <option value="requestTelemetry">request telemetry</option>
                <option value="setWheelSpeed">set wheel speed (rpm)</option>
                <option value="requestStsType">request STS type</option>
                <option value="raw">raw hex</option>
              </select>
            </label>
            <label>value
              <input id="value" placeholder="500 / 01 / hex..." />
            </label>
            <button type="submit">send</button>
            <div id="form-error" class="error"></div>
          </form>
        </aside>
      </main>`;

    const connBadge = root.querySelector("#conn") as HTMLElement;
    const wheel = root.querySelector("#wheel") as HTMLElement;
    const logBody = root.querySelector("#log tbody") as HTMLElement;
    const form = root.querySelector("#command-form") as HTMLFormElement;
    const targetSelect = root.querySelector("#target") as HTMLSelectElement;
    const actionSelect = root.querySelector("#action") as HTMLSelectElement;
    const valueInput = root.querySelector("#value") as HTMLInputElement;
    const formError = root.querySelector("#form-error") as HTMLElement;
    (root.querySelector("#gw-url") as HTMLElement).textContent = gatewayUrl;

    for (const [id, name] of SUBSYSTEMS) {
        const option = document.createElement("option");
        option.value = String(id);
        option.textContent = `${name} (0x${id.toString(16).padStart(2, "0")})`;
        targetSelect.appendChild(option);
    }

    let renderedRows = 0;
    const render = () => {
        connBadge.textContent = session.state;
        connBadge.className = `badge badge-${session.state}`;
        if (session.lastWheel !== null) {
            wheel.textContent = `${session.lastWheel.rpm} rpm`;
        }
        // log is append-only, so only new rows need DOM work
        for (; renderedRows < session.log.length; renderedRows++) {
            const row = session.log[renderedRows];
            const tr = document.createElement("tr");
            tr.className = `dir-${row.dir}`;
            for (const cell of [row.ts, row.dir, row.id, row.summary, row.payloadHex]) {
                const td = document.createElement("td");
                td.textContent = cell;
                tr.appendChild(td);
            }
            logBody.appendChild(tr);
        }
        if (renderedRows > session.log.length) {
            logBody.innerHTML = "";
            renderedRows = 0;
        }
    };

    const session = new ConsoleSession(gatewayUrl, factory, { onChange: render });

    form.addEventListener("submit", (ev) => {
        ev.preventDefault();
        formError.textContent = "";
        try {
            session.sendCommand(Number(targetSelect.value), readAction());
            valueInput.classList.remove("invalid");
        } catch (err) {
            valueInput.classList.add("invalid");
            formError.textContent = err instanceof Error ? err.message : String(err);
        }
    });

    function readAction(): Action {
        const value = valueInput.value.trim();
        switch (actionSelect.value) {
            case "setWheelSpeed":
                return { kind: "setWheelSpeed", rpm: Number(value) };
            case "requestTelemetry":
                return { kind: "requestTelemetry" };
            case "requestStsType":
                return { kind: "requestStsType", type: parseInt(value || "01", 16) };
            default:
                return { kind: "raw", hex: value };
        }
    }

    session.connect();
    render();
    return session;
}
